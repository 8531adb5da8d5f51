#include "citerec/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace citerec {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::size_t> code_point_offsets(std::string_view s) {
  std::vector<std::size_t> starts;
  starts.reserve(s.size() + 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0u) != 0x80u) starts.push_back(i);
  }
  starts.push_back(s.size());
  return starts;
}

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string_view::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

template <class Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusError(where(path, lineno) + "malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw CorpusError(where(path, lineno) + "expected a JSON object");
    try {
      fn(obj, lineno);
    } catch (const json::exception& e) {
      throw CorpusError(where(path, lineno) + e.what());
    } catch (const CorpusError& e) {
      throw CorpusError(where(path, lineno) + e.what());
    }
  }
}

std::string required_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw CorpusError(std::string("missing field \"") + key + "\"");
  if (!it->is_string()) throw CorpusError(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

YearMonth YearMonth::parse(std::string_view text) {
  auto bad = [&] { return CorpusError("invalid date \"" + std::string(text) + "\" (expected YYYY-MM)"); };
  if (text.size() != 7 || text[4] != '-') throw bad();
  YearMonth ym;
  auto r1 = std::from_chars(text.data(), text.data() + 4, ym.year);
  auto r2 = std::from_chars(text.data() + 5, text.data() + 7, ym.month);
  if (r1.ec != std::errc{} || r1.ptr != text.data() + 4 || r2.ec != std::errc{} ||
      r2.ptr != text.data() + 7 || ym.month < 1 || ym.month > 12) {
    throw bad();
  }
  return ym;
}

std::string YearMonth::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

DateRange DateRange::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw CorpusError("invalid date range \"" + std::string(text) + "\" (expected YYYY-MM:YYYY-MM)");
  }
  DateRange r{YearMonth::parse(text.substr(0, colon)), YearMonth::parse(text.substr(colon + 1))};
  if (r.end < r.start) throw CorpusError("date range \"" + std::string(text) + "\" ends before it starts");
  return r;
}

std::string_view split_name(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Val: return "val";
    case SplitName::Test: return "test";
  }
  return "?";
}

std::array<DateRange, 3> default_split_ranges() {
  return {DateRange{{1991, 1}, {2019, 12}}, DateRange{{2020, 1}, {2020, 2}},
          DateRange{{2020, 3}, {2020, 4}}};
}

std::string extract_local_context(std::string_view full_text, CharSpan span, std::size_t window) {
  if (window == 0) throw std::invalid_argument("extract_local_context: window must be positive");
  const auto cp = code_point_offsets(full_text);
  const std::size_t n = cp.size() - 1;
  if (span.begin > span.end || span.end > n) {
    std::ostringstream os;
    os << "extract_local_context: citation span [" << span.begin << ", " << span.end
       << ") is outside text of " << n << " characters";
    throw std::out_of_range(os.str());
  }
  const std::size_t want_before = (window + 1) / 2;
  const std::size_t want_after = window / 2;
  const std::size_t have_before = span.begin;
  const std::size_t have_after = n - span.end;
  const std::size_t spill_to_before = want_after > have_after ? want_after - have_after : 0;
  const std::size_t spill_to_after = want_before > have_before ? want_before - have_before : 0;
  const std::size_t take_before = std::min(have_before, want_before + spill_to_before);
  const std::size_t take_after = std::min(have_after, want_after + spill_to_after);

  std::string out;
  const std::size_t b0 = cp[span.begin - take_before];
  out.append(full_text.substr(b0, cp[span.begin] - b0));
  out.append(kCitationToken);
  const std::size_t a0 = cp[span.end];
  out.append(full_text.substr(a0, cp[span.end + take_after] - a0));
  return out;
}

SplitResult build_splits(const std::vector<ContextRecord>& contexts,
                         const std::array<DateRange, 3>& ranges) {
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) {
      if (ranges[i].overlaps(ranges[j])) {
        throw std::invalid_argument("build_splits: " + std::string(split_name(SplitName(i))) +
                                    " and " + std::string(split_name(SplitName(j))) +
                                    " date ranges overlap");
      }
    }
  }
  SplitResult out;
  for (std::size_t i = 0; i < 3; ++i) {
    out.splits[i].name = static_cast<SplitName>(i);
    out.splits[i].date_range = ranges[i];
  }
  for (const auto& c : contexts) {
    bool placed = false;
    for (std::size_t i = 0; i < 3 && !placed; ++i) {
      if (ranges[i].contains(c.context_date)) {
        out.splits[i].context_ids.push_back(c.context_id);
        placed = true;
      }
    }
    if (!placed) ++out.dropped;
  }
  return out;
}

Corpus::Corpus(std::vector<PaperRecord> papers, std::vector<ContextRecord> contexts)
    : papers_(std::move(papers)), contexts_(std::move(contexts)) {
  paper_by_id_.reserve(papers_.size());
  for (std::size_t i = 0; i < papers_.size(); ++i) {
    const auto& p = papers_[i];
    if (p.paper_id.empty()) throw CorpusError("paper #" + std::to_string(i + 1) + " has an empty paper_id");
    if (p.title.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw CorpusError("paper " + p.paper_id + " has an empty title");
    }
    if (!paper_by_id_.emplace(p.paper_id, i).second) {
      throw CorpusError("duplicate paper_id \"" + p.paper_id + "\"");
    }
    if (p.abstract.empty()) ++empty_abstracts_;
  }
  context_by_id_.reserve(contexts_.size());
  for (std::size_t i = 0; i < contexts_.size(); ++i) {
    const auto& c = contexts_[i];
    if (!context_by_id_.emplace(c.context_id, i).second) {
      throw CorpusError("duplicate context_id \"" + c.context_id + "\"");
    }
    if (c.citing_id == c.cited_id) {
      throw CorpusError("context " + c.context_id + " cites its own paper " + c.citing_id);
    }
    if (count_occurrences(c.local_context, kCitationToken) != 1) {
      throw CorpusError("context " + c.context_id + " must contain the marker \"CIT\" exactly once");
    }
    if (!paper_by_id_.contains(c.citing_id)) {
      throw CorpusError("context " + c.context_id + " has unknown citing_id \"" + c.citing_id + "\"");
    }
    if (!paper_by_id_.contains(c.cited_id)) {
      warnings_.push_back("context " + c.context_id + ": dangling cited_id \"" + c.cited_id + "\"");
    }
  }
}

const PaperRecord* Corpus::find_paper(std::string_view id) const {
  auto it = paper_by_id_.find(std::string(id));
  return it == paper_by_id_.end() ? nullptr : &papers_[it->second];
}

const ContextRecord* Corpus::find_context(std::string_view id) const {
  auto it = context_by_id_.find(std::string(id));
  return it == context_by_id_.end() ? nullptr : &contexts_[it->second];
}

std::optional<std::size_t> Corpus::paper_index(std::string_view id) const {
  auto it = paper_by_id_.find(std::string(id));
  if (it == paper_by_id_.end()) return std::nullopt;
  return it->second;
}

std::optional<Query> Corpus::make_query(const ContextRecord& c) const {
  const PaperRecord* citing = find_paper(c.citing_id);
  if (citing == nullptr || find_paper(c.cited_id) == nullptr) return std::nullopt;
  return Query{c.context_id, c.citing_id, c.cited_id, c.local_context, citing->title, citing->abstract};
}

std::vector<Query> Corpus::make_queries(const std::vector<std::string>& context_ids) const {
  std::vector<Query> out;
  out.reserve(context_ids.size());
  for (const auto& id : context_ids) {
    const ContextRecord* c = find_context(id);
    if (c == nullptr) continue;
    if (auto q = make_query(*c)) out.push_back(std::move(*q));
  }
  return out;
}

std::vector<PaperRecord> read_papers_jsonl(const std::filesystem::path& path) {
  std::vector<PaperRecord> out;
  for_each_json_line(path, [&](const json& obj, std::size_t) {
    out.push_back(PaperRecord{required_string(obj, "paper_id"), required_string(obj, "title"),
                              required_string(obj, "abstract"),
                              YearMonth::parse(required_string(obj, "pub_date"))});
  });
  return out;
}

std::vector<ContextRecord> read_contexts_jsonl(const std::filesystem::path& path) {
  std::vector<ContextRecord> out;
  for_each_json_line(path, [&](const json& obj, std::size_t) {
    out.push_back(ContextRecord{required_string(obj, "context_id"), required_string(obj, "citing_id"),
                                required_string(obj, "cited_id"),
                                required_string(obj, "local_context"),
                                YearMonth::parse(required_string(obj, "context_date"))});
  });
  return out;
}

Corpus load_corpus(const std::filesystem::path& papers_path,
                   const std::optional<std::filesystem::path>& contexts_path) {
  auto papers = read_papers_jsonl(papers_path);
  std::vector<ContextRecord> contexts;
  if (contexts_path) contexts = read_contexts_jsonl(*contexts_path);
  return Corpus(std::move(papers), std::move(contexts));
}

std::string serialize_papers(const std::vector<PaperRecord>& papers) {
  std::string out;
  for (const auto& p : papers) {
    ordered_json obj;
    obj["paper_id"] = p.paper_id;
    obj["title"] = p.title;
    obj["abstract"] = p.abstract;
    obj["pub_date"] = p.pub_date.str();
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_contexts(const std::vector<ContextRecord>& contexts) {
  std::string out;
  for (const auto& c : contexts) {
    ordered_json obj;
    obj["context_id"] = c.context_id;
    obj["citing_id"] = c.citing_id;
    obj["cited_id"] = c.cited_id;
    obj["local_context"] = c.local_context;
    obj["context_date"] = c.context_date.str();
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string serialize_splits(const SplitResult& splits) {
  ordered_json obj;
  for (const auto& s : splits.splits) obj[std::string(split_name(s.name))] = s.context_ids;
  return obj.dump(2) + "\n";
}

std::array<std::vector<std::string>, 3> read_splits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  json obj;
  try {
    obj = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CorpusError(path.string() + ": malformed JSON: " + e.what());
  }
  std::array<std::vector<std::string>, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string key(split_name(static_cast<SplitName>(i)));
    if (!obj.contains(key)) throw CorpusError(path.string() + ": missing split \"" + key + "\"");
    out[i] = obj.at(key).get<std::vector<std::string>>();
  }
  return out;
}

std::vector<SourceDocument> read_source_documents(const std::filesystem::path& path) {
  std::vector<SourceDocument> out;
  for_each_json_line(path, [&](const json& obj, std::size_t) {
    SourceDocument doc;
    doc.paper = PaperRecord{required_string(obj, "paper_id"), required_string(obj, "title"),
                            required_string(obj, "abstract"),
                            YearMonth::parse(required_string(obj, "pub_date"))};
    doc.body = obj.value("body", std::string{});
    if (auto it = obj.find("citations"); it != obj.end()) {
      for (const auto& c : *it) {
        doc.citations.push_back(
            {CharSpan{c.at("start").get<std::size_t>(), c.at("end").get<std::size_t>()},
             c.at("cited_id").get<std::string>()});
      }
    }
    out.push_back(std::move(doc));
  });
  return out;
}

BuiltDataset build_dataset(const std::vector<SourceDocument>& docs, std::size_t window,
                           const std::array<DateRange, 3>& ranges) {
  BuiltDataset out;
  std::unordered_map<std::string, std::size_t> known;
  for (const auto& d : docs) {
    if (!known.emplace(d.paper.paper_id, out.papers.size()).second) {
      throw CorpusError("duplicate paper_id \"" + d.paper.paper_id + "\"");
    }
    out.papers.push_back(d.paper);
  }
  for (const auto& d : docs) {
    std::size_t k = 0;
    for (const auto& cit : d.citations) {
      if (!known.contains(cit.cited_id) || cit.cited_id == d.paper.paper_id) {
        ++out.unresolved_citations;
        continue;
      }
      std::string text;
      try {
        text = extract_local_context(d.body, cit.span, window);
      } catch (const std::out_of_range& e) {
        throw CorpusError("paper " + d.paper.paper_id + ": " + e.what());
      }
      if (count_occurrences(text, kCitationToken) != 1) {
        // The surrounding text already contains the marker string; such a
        // context cannot satisfy the one-marker invariant.
        ++out.unresolved_citations;
        continue;
      }
      out.contexts.push_back(ContextRecord{d.paper.paper_id + "#" + std::to_string(k++),
                                           d.paper.paper_id, cit.cited_id, std::move(text),
                                           d.paper.pub_date});
    }
  }
  out.splits = build_splits(out.contexts, ranges);
  return out;
}

}  // namespace citerec
