// SPDX-License-Identifier: Apache-2.0
#include "skillrank/service.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace skillrank {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Pipeline

std::string_view to_string(FirstStage stage) { return stage == FirstStage::bm25 ? "bm25" : "dense"; }

FirstStage parse_first_stage(std::string_view text) {
    if (text == "bm25") return FirstStage::bm25;
    if (text == "dense") return FirstStage::dense;
    throw std::invalid_argument("unknown first stage '" + std::string(text) + "'");
}

void PipelineConfig::validate() const {
    if (top_n == 0) throw std::invalid_argument("top_n must be >= 1");
    if (rerank) {
        rerank->validate();
        if (rerank->depth < top_n)
            throw std::invalid_argument("rerank depth " + std::to_string(rerank->depth) + " is below top_n " +
                                        std::to_string(top_n));
    }
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig c;
    c.first_stage = parse_first_stage(j.value("first_stage", std::string("bm25")));
    c.quant = parse_scheme(j.value("quant", std::string("none")));
    c.top_n = j.value("top_n", std::size_t{10});
    if (j.contains("rerank") && !j.at("rerank").is_null()) {
        const auto& r = j.at("rerank");
        RerankConfig rc;
        rc.depth = r.value("depth", rc.depth);
        rc.max_input_len = r.value("max_input_len", rc.max_input_len);
        rc.variant = FieldVariant::parse(r.value("variant", std::string("original")));
        rc.include_skill_desc = r.value("include_skill_desc", false);
        rc.pooling = parse_pooling(r.value("pooling", std::string("first")));
        c.rerank = rc;
    }
    c.validate();
    return c;
}

json PipelineConfig::to_json() const {
    json j{{"first_stage", to_string(first_stage)}, {"quant", skillrank::to_string(quant)}, {"top_n", top_n}};
    if (rerank)
        j["rerank"] = {{"depth", rerank->depth},
                       {"max_input_len", rerank->max_input_len},
                       {"variant", rerank->variant.to_string()},
                       {"include_skill_desc", rerank->include_skill_desc},
                       {"pooling", skillrank::to_string(rerank->pooling)}};
    else
        j["rerank"] = nullptr;
    return j;
}

json to_json(const CourseCard& card) {
    json j{{"doc_id", card.doc_id}, {"title", card.title}, {"provider", card.provider}, {"score", card.score},
           {"thumbnail", nullptr}};
    j["level"] = card.level ? json(*card.level) : json(nullptr);
    j["rating"] = card.rating ? json(*card.rating) : json(nullptr);
    j["url"] = card.url ? json(*card.url) : json(nullptr);
    return j;
}

std::vector<CourseCard> recommend(const PipelineResources& res, std::string_view skill, std::string_view occupation,
                                  const PipelineConfig& cfg) {
    cfg.validate();
    if (!res.corpus || !res.lexical) throw std::logic_error("recommend needs a corpus and a lexical index");
    Query q;
    q.skill = std::string(skill);
    q.occupation = std::string(occupation);
    if (auto it = res.skill_descriptions.find(skill); it != res.skill_descriptions.end())
        q.skill_description = it->second;
    const std::string text = build_query_text(q);
    q.id = text;

    const std::size_t depth = cfg.rerank ? std::max(cfg.rerank->depth, cfg.top_n) : cfg.top_n;
    ScoredList candidates;
    bool dense_done = false;
    if (cfg.first_stage == FirstStage::dense) {
        const auto qvec = res.query_embeddings ? res.query_embeddings->find(text) : std::span<const double>{};
        if (res.doc_embeddings && !qvec.empty()) {
            candidates = cosine_topk(*res.doc_embeddings, qvec, depth, text);
            dense_done = true;
        } else {
            spdlog::warn("no query embedding for '{}'; using bm25", text);
        }
    }
    if (!dense_done) candidates = search(*res.lexical, q, depth);

    if (cfg.rerank && !candidates.empty()) {
        if (!res.model || !res.tokenizer) throw std::logic_error("reranking needs a model and a tokenizer");
        candidates = rerank(*res.model, *res.tokenizer, *res.corpus, q, candidates, *cfg.rerank);
    }

    std::vector<CourseCard> cards;
    for (std::size_t i = 0; i < std::min(cfg.top_n, candidates.size()); ++i) {
        const auto& e = candidates.entries[i];
        const CourseDoc& d = res.corpus->at(e.doc_id);
        cards.push_back({d.id, d.title, std::string(to_string(d.provider)), d.level, d.rating, d.url, e.score});
    }
    return cards;
}

// ---------------------------------------------------------------------------
// A/B assignment and funnel

std::string_view to_string(Arm arm) { return arm == Arm::control_bm25 ? "control_bm25" : "treatment_rankt5"; }

Arm parse_arm(std::string_view text) {
    if (text == "control_bm25") return Arm::control_bm25;
    if (text == "treatment_rankt5") return Arm::treatment_rankt5;
    throw std::invalid_argument("unknown arm '" + std::string(text) + "'");
}

ABAssignment assign_arm(std::int64_t user_id) {
    if (user_id < 0) throw std::invalid_argument("user id must be non-negative");
    return {user_id, user_id % 2 == 0 ? Arm::control_bm25 : Arm::treatment_rankt5};
}

std::string_view to_string(EventKind kind) {
    switch (kind) {
    case EventKind::open_skill_card: return "open_skill_card";
    case EventKind::open_course_card: return "open_course_card";
    case EventKind::go_to_course: return "go_to_course";
    }
    return "";
}

EventKind parse_event_kind(std::string_view text) {
    if (text == "open_skill_card") return EventKind::open_skill_card;
    if (text == "open_course_card") return EventKind::open_course_card;
    if (text == "go_to_course") return EventKind::go_to_course;
    throw std::invalid_argument("unknown event kind '" + std::string(text) + "'");
}

void validate_event(const FunnelEvent& e) {
    if (e.event_id.empty()) throw std::invalid_argument("event id is empty");
    if (assign_arm(e.user_id).arm != e.arm)
        throw std::invalid_argument("event " + e.event_id + ": arm does not match user " + std::to_string(e.user_id));
    if (e.kind != EventKind::open_skill_card && (!e.doc_id || e.doc_id->empty()))
        throw std::invalid_argument("event " + e.event_id + ": course event without doc id");
}

json to_json(const FunnelEvent& e) {
    json j{{"event_id", e.event_id}, {"user_id", e.user_id},   {"arm", to_string(e.arm)},
           {"kind", to_string(e.kind)}, {"query_id", e.query_id}, {"timestamp", e.timestamp}};
    j["doc_id"] = e.doc_id ? json(*e.doc_id) : json(nullptr);
    return j;
}

FunnelEvent event_from_json(const json& j) {
    try {
        FunnelEvent e;
        e.event_id = j.at("event_id").get<std::string>();
        e.user_id = j.at("user_id").get<std::int64_t>();
        e.arm = j.contains("arm") ? parse_arm(j.at("arm").get<std::string>()) : assign_arm(e.user_id).arm;
        e.kind = parse_event_kind(j.at("kind").get<std::string>());
        e.query_id = j.value("query_id", std::string());
        if (j.contains("doc_id") && !j.at("doc_id").is_null()) e.doc_id = j.at("doc_id").get<std::string>();
        e.timestamp = j.value("timestamp", std::int64_t{0});
        return e;
    } catch (const json::exception& ex) {
        throw std::invalid_argument(std::string("malformed event: ") + ex.what());
    }
}

EventStore::EventStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty()) return;
    if (std::ifstream in(path_); in) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                auto e = event_from_json(json::parse(line));
                if (ids_.insert(e.event_id).second) events_.push_back(std::move(e));
            } catch (const std::exception& ex) {
                spdlog::warn("{}:{}: skipping unreadable event ({})", path_.string(), line_no, ex.what());
            }
        }
    }
    out_.open(path_, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open event store " + path_.string());
}

bool EventStore::record(const FunnelEvent& e) {
    validate_event(e);
    std::lock_guard lock(mutex_);
    if (ids_.count(e.event_id)) return false;
    if (out_.is_open()) {
        out_ << to_json(e).dump() << '\n';
        out_.flush();
        if (!out_) throw std::runtime_error("failed to append to event store " + path_.string());
    }
    ids_.insert(e.event_id);
    events_.push_back(e);
    return true;
}

std::vector<FunnelEvent> EventStore::events() const {
    std::lock_guard lock(mutex_);
    return events_;
}

std::size_t EventStore::size() const {
    std::lock_guard lock(mutex_);
    return events_.size();
}

FunnelRates funnel_rates(std::span<const FunnelEvent> events, Arm arm) {
    FunnelRates r;
    for (const auto& e : events) {
        if (e.arm != arm) continue;
        switch (e.kind) {
        case EventKind::open_skill_card: ++r.skill_cards; break;
        case EventKind::open_course_card: ++r.course_cards; break;
        case EventKind::go_to_course: ++r.go_to_course; break;
        }
    }
    r.course_per_skill_undefined = r.skill_cards == 0;
    r.go_per_course_undefined = r.course_cards == 0;
    if (r.skill_cards) r.course_per_skill = static_cast<double>(r.course_cards) / static_cast<double>(r.skill_cards);
    if (r.course_cards) r.go_per_course = static_cast<double>(r.go_to_course) / static_cast<double>(r.course_cards);
    return r;
}

// ---------------------------------------------------------------------------
// Questionnaire

std::string_view to_string(Choice choice) {
    switch (choice) {
    case Choice::list_a_system: return "list_a_system";
    case Choice::list_b_system: return "list_b_system";
    case Choice::no_preference: return "no_preference";
    }
    return "";
}

Choice parse_choice(std::string_view text) {
    if (text == "list_a_system") return Choice::list_a_system;
    if (text == "list_b_system") return Choice::list_b_system;
    if (text == "no_preference") return Choice::no_preference;
    throw std::invalid_argument("unknown choice '" + std::string(text) + "'");
}

Position parse_position(std::string_view text) {
    if (text == "first") return Position::first;
    if (text == "second") return Position::second;
    if (text == "none" || text == "no_preference") return Position::none;
    throw std::invalid_argument("choice must be first, second or none");
}

json to_json(const DisplayPair& pair) {
    json one = json::array(), two = json::array();
    for (const auto& c : pair.list_one) one.push_back(to_json(c));
    for (const auto& c : pair.list_two) two.push_back(to_json(c));
    // scores would identify the system
    for (auto* list : {&one, &two})
        for (auto& c : *list) c.erase("score");
    return {{"query_id", pair.query_id}, {"query", pair.query_text}, {"list_one", one}, {"list_two", two},
            {"token", pair.token}};
}

std::optional<DisplayPair> questionnaire_pair(const Query& q, const std::vector<CourseCard>& system_a,
                                              const std::vector<CourseCard>& system_b, bool a_first,
                                              std::string token) {
    if (system_a.size() < kCardsPerList || system_b.size() < kCardsPerList) {
        spdlog::warn("query {} excluded from questionnaire: {} and {} results, need {}", q.id, system_a.size(),
                     system_b.size(), kCardsPerList);
        return std::nullopt;
    }
    DisplayPair p;
    p.query_id = q.id;
    p.query_text = build_query_text(q);
    const auto& first = a_first ? system_a : system_b;
    const auto& second = a_first ? system_b : system_a;
    p.list_one.assign(first.begin(), first.begin() + kCardsPerList);
    p.list_two.assign(second.begin(), second.begin() + kCardsPerList);
    p.token = std::move(token);
    return p;
}

Choice resolve_choice(Position picked, bool a_first) {
    if (picked == Position::none) return Choice::no_preference;
    return (picked == Position::first) == a_first ? Choice::list_a_system : Choice::list_b_system;
}

json to_json(const PreferenceResponse& r) {
    return {{"respondent", r.respondent},
            {"query_id", r.query_id},
            {"choice", to_string(r.choice)},
            {"shown_first", to_string(r.shown_first)},
            {"reason", r.reason}};
}

PreferenceResponse response_from_json(const json& j) {
    try {
        PreferenceResponse r;
        r.respondent = j.at("respondent").get<std::string>();
        r.query_id = j.at("query_id").get<std::string>();
        r.choice = parse_choice(j.at("choice").get<std::string>());
        r.shown_first = parse_arm(j.at("shown_first").get<std::string>());
        r.reason = j.at("reason").get<std::string>();
        return r;
    } catch (const json::exception& ex) {
        throw std::invalid_argument(std::string("malformed response: ") + ex.what());
    }
}

namespace {

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

ResponseStore::ResponseStore(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.empty()) return;
    if (std::ifstream in(path_); in) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                apply(response_from_json(json::parse(line)));
            } catch (const std::exception& ex) {
                spdlog::warn("{}:{}: skipping unreadable response ({})", path_.string(), line_no, ex.what());
            }
        }
    }
    out_.open(path_, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open response store " + path_.string());
}

void ResponseStore::apply(const PreferenceResponse& r) { latest_[{r.respondent, r.query_id}] = r; }

void ResponseStore::record(const PreferenceResponse& r) {
    if (blank(r.reason)) throw std::invalid_argument("a reason is required");
    if (r.respondent.empty() || r.query_id.empty()) throw std::invalid_argument("respondent and query id are required");
    std::lock_guard lock(mutex_);
    if (out_.is_open()) {
        out_ << to_json(r).dump() << '\n';
        out_.flush();
        if (!out_) throw std::runtime_error("failed to append to response store " + path_.string());
    }
    apply(r);
}

PreferenceCounts ResponseStore::aggregate(std::string_view query_id) const {
    std::lock_guard lock(mutex_);
    PreferenceCounts c;
    for (const auto& [key, r] : latest_) {
        if (key.second != query_id) continue;
        switch (r.choice) {
        case Choice::list_a_system: ++c.system_a; break;
        case Choice::list_b_system: ++c.system_b; break;
        case Choice::no_preference: ++c.no_preference; break;
        }
    }
    return c;
}

std::map<std::string, PreferenceCounts> ResponseStore::aggregate_all() const {
    std::lock_guard lock(mutex_);
    std::map<std::string, PreferenceCounts> out;
    for (const auto& [key, r] : latest_) {
        auto& c = out[key.second];
        switch (r.choice) {
        case Choice::list_a_system: ++c.system_a; break;
        case Choice::list_b_system: ++c.system_b; break;
        case Choice::no_preference: ++c.no_preference; break;
        }
    }
    return out;
}

std::size_t ResponseStore::size() const {
    std::lock_guard lock(mutex_);
    return latest_.size();
}

// ---------------------------------------------------------------------------
// Service

Service::Service(PipelineResources resources, ServiceOptions options, EventStore& events, ResponseStore& responses)
    : resources_(std::move(resources)),
      options_(std::move(options)),
      events_(events),
      responses_(responses),
      rng_(options_.seed ? *options_.seed : std::random_device{}()) {
    options_.control.validate();
    options_.treatment.validate();
}

const PipelineConfig& Service::config_for(Arm arm) const {
    return arm == Arm::control_bm25 ? options_.control : options_.treatment;
}

json Service::recommend(std::string_view skill, std::string_view occupation, std::int64_t user_id) const {
    const auto assignment = assign_arm(user_id);
    json results = json::array();
    for (const auto& card : skillrank::recommend(resources_, skill, occupation, config_for(assignment.arm)))
        results.push_back(to_json(card));
    return {{"user_id", user_id},
            {"arm", to_string(assignment.arm)},
            {"query", std::string(skill) + " for " + std::string(occupation)},
            {"results", results}};
}

json Service::record_event(const json& body) {
    const bool stored = events_.record(event_from_json(body));
    return {{"ok", true}, {"stored", stored}};
}

json Service::funnel(Arm arm) const {
    const auto events = events_.events();
    const auto r = funnel_rates(events, arm);
    return {{"arm", to_string(arm)},
            {"counts", {{"open_skill_card", r.skill_cards}, {"open_course_card", r.course_cards},
                        {"go_to_course", r.go_to_course}}},
            {"course_per_skill", r.course_per_skill},
            {"go_per_course", r.go_per_course},
            {"course_per_skill_undefined", r.course_per_skill_undefined},
            {"go_per_course_undefined", r.go_per_course_undefined}};
}

std::string Service::new_token() {
    char buf[33];
    std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(rng_()),
                  static_cast<unsigned long long>(rng_()));
    return buf;
}

json Service::questionnaire_pairs(const std::string& respondent) {
    if (respondent.empty()) throw std::invalid_argument("respondent is required");
    json pairs = json::array();
    json excluded = json::array();
    const std::size_t n = std::min(options_.questionnaire_size, options_.questionnaire_queries.size());
    for (std::size_t i = 0; i < n; ++i) {
        const Query& q = options_.questionnaire_queries[i];
        const auto a = skillrank::recommend(resources_, q.skill, q.occupation, options_.control);
        const auto b = skillrank::recommend(resources_, q.skill, q.occupation, options_.treatment);

        std::string token;
        bool a_first = true;
        {
            std::lock_guard lock(mutex_);
            auto key = std::make_pair(respondent, q.id);
            if (auto it = token_of_.find(key); it != token_of_.end()) {
                token = it->second;
                a_first = slots_.at(token).a_first;
            } else {
                a_first = std::bernoulli_distribution(0.5)(rng_);
                token = new_token();
                token_of_.emplace(key, token);
                slots_.emplace(token, Slot{respondent, q.id, a_first});
            }
        }
        if (auto pair = questionnaire_pair(q, a, b, a_first, token))
            pairs.push_back(to_json(*pair));
        else
            excluded.push_back(q.id);
    }
    return {{"respondent", respondent}, {"pairs", pairs}, {"excluded", excluded}};
}

json Service::submit_response(const json& body) {
    std::string token, choice, reason;
    try {
        token = body.at("token").get<std::string>();
        choice = body.at("choice").get<std::string>();
        reason = body.value("reason", std::string());
    } catch (const json::exception& ex) {
        throw std::invalid_argument(std::string("malformed response: ") + ex.what());
    }
    Slot slot;
    {
        std::lock_guard lock(mutex_);
        auto it = slots_.find(token);
        if (it == slots_.end()) throw std::invalid_argument("unknown token");
        slot = it->second;
    }
    PreferenceResponse r;
    r.respondent = slot.respondent;
    r.query_id = slot.query_id;
    r.choice = resolve_choice(parse_position(choice), slot.a_first);
    r.shown_first = slot.a_first ? Arm::control_bm25 : Arm::treatment_rankt5;
    r.reason = reason;
    responses_.record(r);
    return {{"ok", true}};
}

json Service::questionnaire_results() const {
    json queries = json::object();
    for (const auto& [qid, c] : responses_.aggregate_all())
        queries[qid] = {{to_string(Arm::control_bm25), c.system_a},
                        {to_string(Arm::treatment_rankt5), c.system_b},
                        {"no_preference", c.no_preference},
                        {"total", c.total()}};
    return {{"queries", queries}};
}

namespace {

template <typename F>
void respond(httplib::Response& res, F&& handler) {
    try {
        res.set_content(handler().dump(), "application/json");
    } catch (const std::invalid_argument& e) {
        res.status = 400;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const json::exception& e) {
        res.status = 400;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
        spdlog::error("request failed: {}", e.what());
        res.status = 500;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
}

std::int64_t parse_user_id(const std::string& text) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (text.empty() || used != text.size()) throw std::invalid_argument("user_id must be an integer");
    return v;
}

}  // namespace

void Service::mount(httplib::Server& server, const std::optional<std::filesystem::path>& ui_dir) {
    server.Get("/recommend", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] {
            return recommend(req.get_param_value("skill"), req.get_param_value("occupation"),
                             parse_user_id(req.get_param_value("user_id")));
        });
    });
    server.Post("/events", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] { return record_event(json::parse(req.body)); });
    });
    server.Get("/funnel", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] { return funnel(parse_arm(req.get_param_value("arm"))); });
    });
    server.Get("/questionnaire/pairs", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] { return questionnaire_pairs(req.get_param_value("respondent")); });
    });
    server.Post("/questionnaire/responses", [this](const httplib::Request& req, httplib::Response& res) {
        respond(res, [&] { return submit_response(json::parse(req.body)); });
    });
    server.Get("/questionnaire/results", [this](const httplib::Request&, httplib::Response& res) {
        respond(res, [&] { return questionnaire_results(); });
    });
    if (ui_dir && !server.set_mount_point("/ui", ui_dir->string()))
        spdlog::warn("ui directory {} not found", ui_dir->string());
}

}  // namespace skillrank
