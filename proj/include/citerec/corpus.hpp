#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace citerec {

/// Replacement for a citation marker inside a local context.
inline constexpr std::string_view kCitationToken = "CIT";

/// Raised for malformed or inconsistent corpus input. The message carries the
/// file and line where available.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct YearMonth {
  int year = 1970;
  int month = 1;

  /// Parses "YYYY-MM"; throws CorpusError otherwise.
  static YearMonth parse(std::string_view text);
  [[nodiscard]] std::string str() const;
  auto operator<=>(const YearMonth&) const = default;
};

struct DateRange {
  YearMonth start;
  YearMonth end;  // inclusive

  [[nodiscard]] bool contains(YearMonth d) const { return start <= d && d <= end; }
  [[nodiscard]] bool overlaps(const DateRange& o) const { return start <= o.end && o.start <= end; }
  /// Parses "YYYY-MM:YYYY-MM".
  static DateRange parse(std::string_view text);
};

struct PaperRecord {
  std::string paper_id;
  std::string title;
  std::string abstract;
  YearMonth pub_date;
};

struct ContextRecord {
  std::string context_id;
  std::string citing_id;
  std::string cited_id;
  std::string local_context;
  YearMonth context_date;
};

enum class SplitName { Train = 0, Val = 1, Test = 2 };
std::string_view split_name(SplitName s);

struct DatasetSplit {
  SplitName name = SplitName::Train;
  DateRange date_range;
  std::vector<std::string> context_ids;
};

struct SplitResult {
  std::array<DatasetSplit, 3> splits;  // indexed by SplitName
  std::size_t dropped = 0;

  [[nodiscard]] const DatasetSplit& operator[](SplitName s) const {
    return splits[static_cast<std::size_t>(s)];
  }
};

/// The arXiv scheme: 1991-2019 train, Jan-Feb 2020 val, Mar-Apr 2020 test.
std::array<DateRange, 3> default_split_ranges();

/// Half-open interval of Unicode code-point offsets.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Replace `span` in `full_text` with "CIT" and keep up to ceil(window/2)
/// code points before it and floor(window/2) after it, clipped at the text
/// boundaries. Budget a clipped side cannot use goes to the other side, so
/// the result has at most window + 3 code points. Offsets are in code points
/// of the UTF-8 input. Throws std::out_of_range if the span is invalid and
/// std::invalid_argument if window == 0.
std::string extract_local_context(std::string_view full_text, CharSpan span, std::size_t window);

/// Assign each context to the split whose range contains its date. Contexts
/// outside every range are dropped and counted. Throws std::invalid_argument
/// when ranges overlap.
SplitResult build_splits(const std::vector<ContextRecord>& contexts,
                         const std::array<DateRange, 3>& ranges);

/// Text fields of one local-citation query, plus the ids needed to score it.
struct Query {
  std::string context_id;
  std::string citing_id;
  std::string cited_id;
  std::string local_context;
  std::string citing_title;
  std::string citing_abstract;
};

/// Immutable in-memory corpus. Records keep their file order.
class Corpus {
 public:
  Corpus() = default;
  /// Validates invariants; throws CorpusError on duplicate ids, empty titles,
  /// self-citations, unresolved citing ids, or a local context that does not
  /// hold exactly one marker. Unresolved cited ids become warnings.
  Corpus(std::vector<PaperRecord> papers, std::vector<ContextRecord> contexts);

  [[nodiscard]] const std::vector<PaperRecord>& papers() const { return papers_; }
  [[nodiscard]] const std::vector<ContextRecord>& contexts() const { return contexts_; }
  [[nodiscard]] std::size_t size() const { return papers_.size(); }

  [[nodiscard]] const PaperRecord* find_paper(std::string_view id) const;
  [[nodiscard]] const ContextRecord* find_context(std::string_view id) const;
  [[nodiscard]] std::optional<std::size_t> paper_index(std::string_view id) const;

  [[nodiscard]] const std::vector<std::string>& warnings() const { return warnings_; }
  [[nodiscard]] std::size_t empty_abstract_count() const { return empty_abstracts_; }

  /// Query for a context; nullopt when the cited paper is not in the corpus.
  [[nodiscard]] std::optional<Query> make_query(const ContextRecord& c) const;
  /// Queries for the given context ids, skipping unresolvable ones.
  [[nodiscard]] std::vector<Query> make_queries(const std::vector<std::string>& context_ids) const;

 private:
  std::vector<PaperRecord> papers_;
  std::vector<ContextRecord> contexts_;
  std::unordered_map<std::string, std::size_t> paper_by_id_;
  std::unordered_map<std::string, std::size_t> context_by_id_;
  std::vector<std::string> warnings_;
  std::size_t empty_abstracts_ = 0;
};

std::vector<PaperRecord> read_papers_jsonl(const std::filesystem::path& path);
std::vector<ContextRecord> read_contexts_jsonl(const std::filesystem::path& path);

/// Load papers.jsonl and (optionally) contexts.jsonl.
Corpus load_corpus(const std::filesystem::path& papers_path,
                   const std::optional<std::filesystem::path>& contexts_path = std::nullopt);

/// Canonical serialization: one object per line, keys in schema order.
std::string serialize_papers(const std::vector<PaperRecord>& papers);
std::string serialize_contexts(const std::vector<ContextRecord>& contexts);
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::string serialize_splits(const SplitResult& splits);
/// Reads splits.json into (train, val, test) context-id lists.
std::array<std::vector<std::string>, 3> read_splits(const std::filesystem::path& path);

/// A full-text source document with resolved citation spans.
struct SourceDocument {
  PaperRecord paper;
  std::string body;
  struct Citation {
    CharSpan span;
    std::string cited_id;
  };
  std::vector<Citation> citations;
};

std::vector<SourceDocument> read_source_documents(const std::filesystem::path& path);

struct BuiltDataset {
  std::vector<PaperRecord> papers;
  std::vector<ContextRecord> contexts;
  SplitResult splits;
  std::size_t unresolved_citations = 0;
};

/// Extract local contexts for every citation whose target is in the
/// collection, and split them by the citing paper's date.
BuiltDataset build_dataset(const std::vector<SourceDocument>& docs, std::size_t window,
                           const std::array<DateRange, 3>& ranges);

}  // namespace citerec
