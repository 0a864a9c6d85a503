// SPDX-License-Identifier: Apache-2.0
#include "skillrank/lexical_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace skillrank {

// ---------------------------------------------------------------------------
// Analyzer

namespace {

// Decodes one UTF-8 code point; invalid bytes decode to U+FFFD and advance by one.
std::uint32_t next_code_point(std::string_view s, std::size_t& i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
        ++i;
        return c;
    }
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if ((c >> 5) == 0x6) {
        extra = 1;
        cp = c & 0x1F;
    } else if ((c >> 4) == 0xE) {
        extra = 2;
        cp = c & 0x0F;
    } else if ((c >> 3) == 0x1E) {
        extra = 3;
        cp = c & 0x07;
    } else {
        ++i;
        return 0xFFFD;
    }
    if (i + extra >= s.size()) {
        ++i;
        return 0xFFFD;
    }
    for (std::size_t k = 1; k <= extra; ++k) {
        const auto cc = static_cast<unsigned char>(s[i + k]);
        if ((cc & 0xC0) != 0x80) {
            ++i;
            return 0xFFFD;
        }
        cp = (cp << 6) | (cc & 0x3F);
    }
    i += extra + 1;
    return cp;
}

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

bool is_word_code_point(std::uint32_t cp) {
    if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) != 0;
    if (cp <= 0xBF) return cp == 0xAA || cp == 0xB5 || cp == 0xBA;
    if (cp == 0xD7 || cp == 0xF7) return false;
    if (cp >= 0x2000 && cp <= 0x2BFF) return false;  // punctuation, currency, symbols, arrows
    if (cp >= 0x3000 && cp <= 0x303F) return false;  // CJK punctuation
    if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
    if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
    if (cp == 0xFFFD) return false;
    return true;
}

std::uint32_t to_lower(std::uint32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 32;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 32;
    if (cp >= 0x100 && cp <= 0x17F && cp != 0x130 && cp != 0x131 && cp != 0x138 && cp != 0x149) {
        // Latin Extended-A alternates upper/lower case, with a parity shift
        // between U+0139 and U+0148 and after U+0178.
        bool shifted = (cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E);
        bool upper = shifted ? (cp % 2 == 1) : (cp % 2 == 0);
        if (cp == 0x178) return 0xFF;
        if (cp == 0x17F) return cp;
        return upper ? cp + 1 : cp;
    }
    if (cp >= 0x391 && cp <= 0x3AB && cp != 0x3A2) return cp + 32;  // Greek
    if (cp >= 0x410 && cp <= 0x42F) return cp + 32;                  // Cyrillic
    if (cp >= 0x400 && cp <= 0x40F) return cp + 80;
    return cp;
}

}  // namespace

std::vector<std::string> analyze(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (std::size_t i = 0; i < text.size();) {
        std::uint32_t cp = next_code_point(text, i);
        if (is_word_code_point(cp)) {
            append_utf8(current, to_lower(cp));
        } else if ((cp == '+' || cp == '#') && !current.empty()) {
            current.push_back(static_cast<char>(cp));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

// ---------------------------------------------------------------------------
// Scoring primitives

void Bm25Params::validate() const {
    if (!(k1 > 0.0)) throw std::invalid_argument("bm25 k1 must be > 0");
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("bm25 b must lie in [0,1]");
    if (!(title_weight > 0.0 && desc_weight > 0.0 && exact_title_boost > 0.0))
        throw std::invalid_argument("bm25 field weights and boost must be positive");
}

double bm25_idf(std::size_t num_docs, std::size_t df) {
    const auto n = static_cast<double>(num_docs);
    const auto f = static_cast<double>(df);
    return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

double bm25_tf_weight(double tf, double doc_len, double avg_len, double k1, double b) {
    return tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len / avg_len));
}

// ---------------------------------------------------------------------------
// Index

std::size_t LexicalIndex::document_frequency(Field f, std::string_view term) const {
    const auto& postings = field(f).postings;
    auto it = postings.find(term);
    return it == postings.end() ? 0 : it->second.size();
}

void LexicalIndex::finalize() {
    for (auto& f : fields_) {
        double total = std::accumulate(f.lengths.begin(), f.lengths.end(), 0.0);
        f.avg_length = f.lengths.empty() ? 0.0 : total / static_cast<double>(f.lengths.size());
    }
}

namespace {

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

void add_field(LexicalIndex::FieldData& field, std::uint32_t doc, const std::vector<std::string>& tokens) {
    field.lengths.push_back(static_cast<std::uint32_t>(tokens.size()));
    std::map<std::string_view, std::uint32_t> tf;
    for (const auto& t : tokens) ++tf[t];
    for (const auto& [term, count] : tf) field.postings[std::string(term)].push_back({doc, count});
}

}  // namespace

LexicalIndex index_corpus(const Corpus& corpus, const FieldVariant& variant, const Bm25Params& params) {
    if (corpus.empty()) throw std::invalid_argument("cannot index an empty corpus");
    params.validate();

    std::vector<const CourseDoc*> order;
    order.reserve(corpus.size());
    for (const auto& d : corpus) order.push_back(&d);
    std::sort(order.begin(), order.end(), [](const CourseDoc* a, const CourseDoc* b) { return a->id < b->id; });

    LexicalIndex index;
    index.params_ = params;
    index.variant_ = variant;
    for (std::uint32_t doc = 0; doc < order.size(); ++doc) {
        const CourseDoc& d = *order[doc];
        auto title = analyze(d.title);
        auto desc = analyze(description_for(d, variant));
        index.doc_ids_.push_back(d.id);
        index.normalized_titles_.push_back(join_tokens(title));
        add_field(index.fields_[static_cast<std::size_t>(Field::title)], doc, title);
        add_field(index.fields_[static_cast<std::size_t>(Field::description)], doc, desc);
    }
    index.finalize();
    return index;
}

std::vector<std::string> query_terms(const Query& q) {
    auto terms = analyze(build_query_text(q));
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    return terms;
}

ScoredList search(const LexicalIndex& index, const Query& q, std::size_t k) {
    if (k < 1) throw std::invalid_argument("search needs k >= 1");
    const auto& p = index.params();
    const std::size_t n = index.doc_count();
    const auto terms = query_terms(q);

    std::array<std::vector<double>, kNumFields> acc;
    for (auto& a : acc) a.assign(n, 0.0);
    std::vector<bool> matched(n, false);

    for (const auto& term : terms) {
        for (std::size_t f = 0; f < kNumFields; ++f) {
            const auto& field = index.field(static_cast<Field>(f));
            auto it = field.postings.find(term);
            if (it == field.postings.end()) continue;
            const double idf = bm25_idf(n, it->second.size());
            for (const auto& posting : it->second) {
                acc[f][posting.doc] += idf * bm25_tf_weight(posting.tf, field.lengths[posting.doc],
                                                            field.avg_length, p.k1, p.b);
                matched[posting.doc] = true;
            }
        }
    }

    const std::string skill = join_tokens(analyze(q.skill));
    struct Hit {
        std::uint32_t doc;
        double score;
    };
    std::vector<Hit> hits;
    for (std::uint32_t doc = 0; doc < n; ++doc) {
        if (!matched[doc]) continue;
        double score = p.title_weight * acc[0][doc] + p.desc_weight * acc[1][doc];
        if (!skill.empty() && index.normalized_title(doc) == skill) score *= p.exact_title_boost;
        hits.push_back({doc, score});
    }
    auto better = [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc < b.doc;
    };
    const std::size_t take = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), better);

    ScoredList out;
    out.query_id = q.id;
    out.stage = Stage::lexical;
    out.entries.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.entries.push_back({index.doc_id(hits[i].doc), hits[i].score});
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr std::string_view kMagic = "skillrank-lexical-index";
constexpr int kVersion = 1;
constexpr std::array<std::string_view, kNumFields> kFieldNames{"title", "description"};

void check_token(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of("\t\n\r") != std::string::npos)
        throw std::invalid_argument(std::string(what) + " cannot be stored: '" + s + "'");
}

std::string expect_line(std::istream& in, std::size_t& line_no) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("index file truncated after line " + std::to_string(line_no));
    ++line_no;
    return line;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        auto tab = line.find('\t', start);
        parts.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return parts;
}

}  // namespace

void write_index(const LexicalIndex& index, std::ostream& out) {
    const auto& p = index.params();
    out << kMagic << ' ' << kVersion << '\n';
    out << std::setprecision(17) << "params\t" << p.k1 << '\t' << p.b << '\t' << p.title_weight << '\t'
        << p.desc_weight << '\t' << p.exact_title_boost << '\n';
    out << "variant\t" << index.variant().to_string() << '\n';
    out << "docs\t" << index.doc_count() << '\n';
    for (std::uint32_t doc = 0; doc < index.doc_count(); ++doc) {
        check_token(index.doc_id(doc), "doc id");
        out << index.doc_id(doc) << '\t' << index.field(Field::title).lengths[doc] << '\t'
            << index.field(Field::description).lengths[doc] << '\t' << index.normalized_title(doc) << '\n';
    }
    for (std::size_t f = 0; f < kNumFields; ++f) {
        const auto& field = index.field(static_cast<Field>(f));
        out << "field\t" << kFieldNames[f] << '\t' << field.postings.size() << '\n';
        for (const auto& [term, postings] : field.postings) {
            out << term << '\t' << postings.size();
            for (const auto& posting : postings) out << '\t' << posting.doc << ':' << posting.tf;
            out << '\n';
        }
    }
}

LexicalIndex read_index(std::istream& in) {
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) -> std::runtime_error {
        return std::runtime_error("index line " + std::to_string(line_no) + ": " + msg);
    };

    {
        std::istringstream header(expect_line(in, line_no));
        std::string magic;
        int version = 0;
        header >> magic >> version;
        if (magic != kMagic) throw fail("not a lexical index file");
        if (version != kVersion) throw fail("unsupported index version " + std::to_string(version));
    }

    LexicalIndex index;
    {
        auto parts = split_tabs(expect_line(in, line_no));
        if (parts.size() != 6 || parts[0] != "params") throw fail("expected params line");
        auto& p = index.params_;
        p.k1 = std::stod(parts[1]);
        p.b = std::stod(parts[2]);
        p.title_weight = std::stod(parts[3]);
        p.desc_weight = std::stod(parts[4]);
        p.exact_title_boost = std::stod(parts[5]);
        p.validate();
    }
    {
        auto parts = split_tabs(expect_line(in, line_no));
        if (parts.size() != 2 || parts[0] != "variant") throw fail("expected variant line");
        index.variant_ = FieldVariant::parse(parts[1]);
    }
    std::size_t n = 0;
    {
        auto parts = split_tabs(expect_line(in, line_no));
        if (parts.size() != 2 || parts[0] != "docs") throw fail("expected docs line");
        n = std::stoul(parts[1]);
    }
    for (std::size_t doc = 0; doc < n; ++doc) {
        auto parts = split_tabs(expect_line(in, line_no));
        if (parts.size() != 4) throw fail("malformed document line");
        if (doc > 0 && !(index.doc_ids_.back() < parts[0])) throw fail("document ids not strictly ascending");
        index.doc_ids_.push_back(parts[0]);
        index.fields_[0].lengths.push_back(static_cast<std::uint32_t>(std::stoul(parts[1])));
        index.fields_[1].lengths.push_back(static_cast<std::uint32_t>(std::stoul(parts[2])));
        index.normalized_titles_.push_back(parts[3]);
    }
    for (std::size_t f = 0; f < kNumFields; ++f) {
        auto parts = split_tabs(expect_line(in, line_no));
        if (parts.size() != 3 || parts[0] != "field" || parts[1] != kFieldNames[f]) throw fail("expected field header");
        std::size_t terms = std::stoul(parts[2]);
        auto& field = index.fields_[f];
        for (std::size_t t = 0; t < terms; ++t) {
            auto row = split_tabs(expect_line(in, line_no));
            if (row.size() < 3) throw fail("malformed postings line");
            std::size_t count = std::stoul(row[1]);
            if (row.size() != count + 2) throw fail("posting count mismatch");
            std::vector<Posting> postings;
            postings.reserve(count);
            for (std::size_t i = 0; i < count; ++i) {
                auto colon = row[i + 2].find(':');
                if (colon == std::string::npos) throw fail("malformed posting");
                Posting posting{static_cast<std::uint32_t>(std::stoul(row[i + 2].substr(0, colon))),
                                static_cast<std::uint32_t>(std::stoul(row[i + 2].substr(colon + 1)))};
                if (posting.doc >= n || (!postings.empty() && posting.doc <= postings.back().doc))
                    throw fail("postings out of order or out of range");
                postings.push_back(posting);
            }
            field.postings.emplace(row[0], std::move(postings));
        }
    }
    index.finalize();
    return index;
}

void save_index(const LexicalIndex& index, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write index file " + path.string());
    write_index(index, out);
    if (!out) throw std::runtime_error("failed writing index file " + path.string());
}

LexicalIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open index file " + path.string());
    return read_index(in);
}

}  // namespace skillrank
