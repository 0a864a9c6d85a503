// SPDX-License-Identifier: Apache-2.0
#include "skillrank/corpus.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>

#include <json.hpp>
#include <spdlog/spdlog.h>

namespace skillrank {

using nlohmann::json;

std::string_view to_string(Provider provider) {
    switch (provider) {
    case Provider::udemy: return "udemy";
    case Provider::udemy_business: return "udemy_business";
    case Provider::edx: return "edx";
    case Provider::goodhabitz: return "goodhabitz";
    case Provider::other: return "other";
    }
    return "other";
}

Provider parse_provider(std::string_view text) {
    if (text == "udemy") return Provider::udemy;
    if (text == "udemy_business") return Provider::udemy_business;
    if (text == "edx") return Provider::edx;
    if (text == "goodhabitz") return Provider::goodhabitz;
    return Provider::other;
}

FieldVariant FieldVariant::parse(std::string_view text) {
    if (text == "original") return original();
    constexpr std::string_view prefix = "summary:";
    if (text.starts_with(prefix) && text.size() > prefix.size())
        return summary_of(std::string(text.substr(prefix.size())));
    throw std::invalid_argument("field variant must be 'original' or 'summary:<name>', got '" +
                                std::string(text) + "'");
}

std::string FieldVariant::to_string() const {
    return summary ? "summary:" + *summary : "original";
}

Corpus::Corpus(std::vector<CourseDoc> docs) : docs_(std::move(docs)) {
    by_id_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        const auto& d = docs_[i];
        if (d.id.empty()) throw CorpusError("document at position " + std::to_string(i + 1) + " has an empty id");
        if (d.title.empty()) throw CorpusError("document " + d.id + " has an empty title");
        for (const auto& [name, text] : d.summaries)
            if (text.empty()) throw CorpusError("document " + d.id + " has an empty summary '" + name + "'");
        if (!by_id_.emplace(d.id, i).second) throw CorpusError("duplicate id " + d.id);
    }
}

const CourseDoc* Corpus::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &docs_[it->second];
}

const CourseDoc& Corpus::at(std::string_view id) const {
    if (const auto* d = find(id)) return *d;
    throw CorpusError("unknown document id " + std::string(id));
}

namespace {

std::optional<std::string> optional_string(const json& rec, const char* key) {
    auto it = rec.find(key);
    if (it == rec.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

CourseDoc parse_course_record(const json& rec) {
    CourseDoc d;
    d.id = rec.at("id").get<std::string>();
    d.provider = parse_provider(rec.value("provider", std::string("other")));
    d.title = rec.at("title").get<std::string>();
    d.description = strip_html(rec.value("description", std::string()));
    if (auto it = rec.find("summaries"); it != rec.end() && !it->is_null()) {
        for (const auto& [name, text] : it->items()) d.summaries[name] = text.get<std::string>();
    }
    d.level = optional_string(rec, "level");
    d.url = optional_string(rec, "url");
    if (auto it = rec.find("rating"); it != rec.end() && !it->is_null()) {
        double r = it->get<double>();
        if (!(r >= 0.0 && r <= 5.0)) throw CorpusError("rating out of range [0,5]");
        d.rating = r;
    }
    return d;
}

bool blank(const std::string& line) {
    for (unsigned char c : line)
        if (!std::isspace(c)) return false;
    return true;
}

}  // namespace

Corpus parse_courses(std::istream& in) {
    std::vector<CourseDoc> docs;
    std::unordered_map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        CourseDoc d;
        try {
            d = parse_course_record(json::parse(line));
        } catch (const std::exception& e) {
            throw CorpusError("line " + std::to_string(line_no) + ": malformed course record: " + e.what());
        }
        if (!seen.emplace(d.id, line_no).second) throw CorpusError("duplicate id " + d.id);
        docs.push_back(std::move(d));
    }
    return Corpus(std::move(docs));
}

Corpus ingest_courses(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open course file " + path.string());
    return parse_courses(in);
}

std::vector<Query> parse_queries(std::istream& in) {
    std::vector<Query> queries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        Query q;
        try {
            auto rec = json::parse(line);
            q.id = rec.at("id").get<std::string>();
            q.skill = rec.at("skill").get<std::string>();
            q.occupation = rec.at("occupation").get<std::string>();
            q.skill_description = optional_string(rec, "skill_description");
        } catch (const std::exception& e) {
            throw CorpusError("line " + std::to_string(line_no) + ": malformed query record: " + e.what());
        }
        if (q.skill.empty() || q.occupation.empty())
            throw CorpusError("line " + std::to_string(line_no) + ": skill and occupation must be non-empty");
        queries.push_back(std::move(q));
    }
    return queries;
}

std::vector<Query> load_queries(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open query file " + path.string());
    return parse_queries(in);
}

// ---------------------------------------------------------------------------
// HTML stripping

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
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

struct NamedEntity {
    std::string_view name;
    std::uint32_t cp;
};

constexpr std::array<NamedEntity, 24> kEntities{{
    {"amp", '&'},      {"lt", '<'},       {"gt", '>'},        {"quot", '"'},     {"apos", '\''},
    {"nbsp", ' '},     {"ndash", 0x2013}, {"mdash", 0x2014},  {"lsquo", 0x2018}, {"rsquo", 0x2019},
    {"ldquo", 0x201C}, {"rdquo", 0x201D}, {"hellip", 0x2026}, {"bull", 0x2022},  {"copy", 0xA9},
    {"reg", 0xAE},     {"trade", 0x2122}, {"euro", 0x20AC},   {"eacute", 0xE9},  {"egrave", 0xE8},
    {"uuml", 0xFC},    {"ouml", 0xF6},    {"auml", 0xE4},     {"middot", 0xB7},
}};

// Inline elements are removed without leaving a word break.
bool is_inline_tag(std::string_view name) {
    static constexpr std::array<std::string_view, 16> inline_tags{
        "a", "b", "i", "u", "em", "strong", "span", "small", "big", "sub", "sup", "code", "mark", "abbr", "s", "font"};
    for (auto t : inline_tags)
        if (t == name) return true;
    return false;
}

bool starts_tag(std::string_view s, std::size_t i) {
    if (s[i] != '<' || i + 1 >= s.size()) return false;
    char c = s[i + 1];
    return std::isalpha(static_cast<unsigned char>(c)) || c == '/' || c == '!' || c == '?';
}

std::string tag_name(std::string_view tag) {
    std::size_t i = 1;
    if (i < tag.size() && tag[i] == '/') ++i;
    std::string name;
    while (i < tag.size() && std::isalnum(static_cast<unsigned char>(tag[i])))
        name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(tag[i++]))));
    return name;
}

// Decodes one entity starting at s[i] == '&'; returns characters consumed or 0.
std::size_t decode_entity(std::string_view s, std::size_t i, std::string& out) {
    auto semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 12) return 0;
    std::string_view body = s.substr(i + 1, semi - i - 1);
    if (body.empty()) return 0;
    if (body[0] == '#') {
        std::uint32_t cp = 0;
        bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
        std::string_view digits = body.substr(hex ? 2 : 1);
        if (digits.empty()) return 0;
        for (char c : digits) {
            int v;
            if (c >= '0' && c <= '9') v = c - '0';
            else if (hex && c >= 'a' && c <= 'f') v = c - 'a' + 10;
            else if (hex && c >= 'A' && c <= 'F') v = c - 'A' + 10;
            else return 0;
            cp = cp * (hex ? 16 : 10) + static_cast<std::uint32_t>(v);
            if (cp > 0x10FFFF) return 0;
        }
        append_utf8(out, cp);
        return semi - i + 1;
    }
    for (const auto& e : kEntities) {
        if (e.name == body) {
            append_utf8(out, e.cp);
            return semi - i + 1;
        }
    }
    return 0;
}

std::string strip_once(std::string_view raw) {
    // Pass 1: drop tags (and the contents of script/style elements).
    std::string text;
    text.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size();) {
        if (starts_tag(raw, i)) {
            auto close = raw.find('>', i);
            if (close == std::string_view::npos) {
                text.append(raw.substr(i));
                break;
            }
            std::string_view tag = raw.substr(i, close - i + 1);
            std::string name = tag_name(tag);
            i = close + 1;
            if ((name == "script" || name == "style") && tag[1] != '/') {
                auto end = raw.find("</" + name, i);
                if (end == std::string_view::npos) break;
                auto end_close = raw.find('>', end);
                i = end_close == std::string_view::npos ? raw.size() : end_close + 1;
            }
            if (!is_inline_tag(name)) text.push_back(' ');
            continue;
        }
        text.push_back(raw[i++]);
    }

    // Pass 2: decode entities.
    std::string decoded;
    decoded.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) {
        if (text[i] == '&') {
            if (auto used = decode_entity(text, i, decoded)) {
                i += used;
                continue;
            }
        }
        decoded.push_back(text[i++]);
    }

    // Pass 3: collapse whitespace runs (including U+00A0) and trim.
    std::string out;
    out.reserve(decoded.size());
    bool pending_space = false;
    for (std::size_t i = 0; i < decoded.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(decoded[i]);
        bool space = std::isspace(c) != 0;
        if (c == 0xC2 && i + 1 < decoded.size() && static_cast<unsigned char>(decoded[i + 1]) == 0xA0) {
            space = true;
            ++i;
        }
        if (space) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(c));
    }
    return out;
}

}  // namespace

std::string strip_html(std::string_view raw) {
    std::string current = strip_once(raw);
    // Decoded entities may form new markup ("&lt;p&gt;"); iterate to a fixed point.
    // Every changing pass either shortens the text or only normalizes whitespace,
    // so this terminates.
    for (;;) {
        std::string next = strip_once(current);
        if (next == current) return current;
        current = std::move(next);
    }
}

// ---------------------------------------------------------------------------
// Text templates

std::string build_query_text(const Query& q) {
    return q.skill + " for " + q.occupation;
}

const std::string& description_for(const CourseDoc& d, const FieldVariant& v, bool* fell_back) {
    if (fell_back) *fell_back = false;
    if (!v.summary) return d.description;
    if (auto it = d.summaries.find(*v.summary); it != d.summaries.end()) return it->second;
    if (fell_back) *fell_back = true;
    spdlog::warn("document {} has no '{}' summary; using the original description", d.id, *v.summary);
    return d.description;
}

DocumentText build_document_text(const CourseDoc& d, const FieldVariant& v) {
    DocumentText out;
    const std::string& description = description_for(d, v, &out.fell_back);
    out.text = "Title: " + d.title + " Description: " + description;
    return out;
}

std::string build_rerank_input(const Query& q, const CourseDoc& d, const FieldVariant& v,
                               bool include_skill_desc) {
    std::string query_text = build_query_text(q);
    if (include_skill_desc) {
        if (!q.skill_description || q.skill_description->empty())
            throw CorpusError("query " + q.id + " has no skill description to include");
        query_text += ". " + *q.skill_description;
    }
    return "Query: " + query_text + " Document: " + build_document_text(d, v).text;
}

std::string build_summarization_prompt(const CourseDoc& d) {
    std::string prompt =
        "I will provide you with a course title and description of an online course that I want you to "
        "summarize in 2 to 3 lines.\n"
        "I want the summary to only include information about the content of the course. "
        "You can leave out any information about the author, at which company the course is used and "
        "information about a 30 day money back guarantee. "
        "You can also leave out any student reviews about the course. I want you to write the summary as if it "
        "were a new shortened course description.\n";
    prompt += "Course title: " + d.title + "\n";
    prompt += "Course description: " + d.description + "\n";
    return prompt;
}

CorpusStats corpus_stats(const Corpus& corpus, const Tokenizer& tokenizer, std::size_t limit,
                         std::size_t bucket_width, std::size_t num_buckets) {
    if (corpus.empty()) throw CorpusError("cannot compute statistics of an empty corpus");
    if (bucket_width == 0 || num_buckets == 0) throw std::invalid_argument("histogram needs positive buckets");
    CorpusStats stats;
    stats.limit = limit;
    stats.bucket_width = bucket_width;
    stats.num_buckets = num_buckets;
    for (const auto& d : corpus) {
        std::size_t len = tokenizer.encode(d.title + " " + d.description).size();
        auto& hist = stats.histogram[d.provider];
        if (hist.empty()) hist.assign(num_buckets, 0);
        ++hist[std::min(len / bucket_width, num_buckets - 1)];
        if (len > limit) ++stats.over_limit;
        ++stats.total;
    }
    stats.over_limit_fraction = static_cast<double>(stats.over_limit) / static_cast<double>(stats.total);
    return stats;
}

}  // namespace skillrank
