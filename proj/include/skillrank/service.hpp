// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "skillrank/corpus.hpp"
#include "skillrank/dense_index.hpp"
#include "skillrank/encoder.hpp"
#include "skillrank/lexical_index.hpp"
#include "skillrank/quant.hpp"
#include "skillrank/ranker.hpp"

namespace httplib {
class Server;
}

namespace skillrank {

// ---------------------------------------------------------------------------
// Two-stage pipeline

enum class FirstStage { bm25, dense };

std::string_view to_string(FirstStage stage);
FirstStage parse_first_stage(std::string_view text);

struct PipelineConfig {
    FirstStage first_stage = FirstStage::bm25;
    std::optional<RerankConfig> rerank;
    QuantScheme quant = QuantScheme::none;
    std::size_t top_n = 10;

    /// top_n >= 1 and rerank.depth >= top_n when reranking.
    void validate() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct CourseCard {
    std::string doc_id;
    std::string title;
    std::string provider;
    std::optional<std::string> level;
    std::optional<double> rating;
    std::optional<std::string> url;
    double score = 0.0;
};

nlohmann::json to_json(const CourseCard& card);

/// Shared read-only state. Pointers left null disable the features needing them.
struct PipelineResources {
    const Corpus* corpus = nullptr;
    const LexicalIndex* lexical = nullptr;
    const EmbeddingStore* doc_embeddings = nullptr;
    const EmbeddingStore* query_embeddings = nullptr;  // keyed by query text
    const Model* model = nullptr;
    const Tokenizer* tokenizer = nullptr;
    std::map<std::string, std::string, std::less<>> skill_descriptions;
};

/// First stage retrieves rerank.depth candidates (top_n without rerank), the
/// optional re-ranker reorders them and the first top_n become cards. A dense
/// first stage falls back to BM25 when the query text has no embedding.
std::vector<CourseCard> recommend(const PipelineResources& res, std::string_view skill, std::string_view occupation,
                                  const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// A/B assignment and click funnel

enum class Arm { control_bm25, treatment_rankt5 };

std::string_view to_string(Arm arm);
Arm parse_arm(std::string_view text);

struct ABAssignment {
    std::int64_t user_id = 0;
    Arm arm = Arm::control_bm25;
};

/// Even ids get control_bm25, odd ids treatment_rankt5. Negative ids throw.
ABAssignment assign_arm(std::int64_t user_id);

enum class EventKind { open_skill_card, open_course_card, go_to_course };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view text);

struct FunnelEvent {
    std::string event_id;
    std::int64_t user_id = 0;
    Arm arm = Arm::control_bm25;
    EventKind kind = EventKind::open_skill_card;
    std::string query_id;
    std::optional<std::string> doc_id;  // course events only
    std::int64_t timestamp = 0;         // milliseconds since the epoch
};

/// Throws std::invalid_argument on an empty event id, an arm that disagrees
/// with assign_arm, or a course event without a doc id.
void validate_event(const FunnelEvent& e);
nlohmann::json to_json(const FunnelEvent& e);
FunnelEvent event_from_json(const nlohmann::json& j);

/// Append-only line-delimited store; duplicate event ids are ignored. An empty
/// path keeps events in memory only.
class EventStore {
public:
    explicit EventStore(std::filesystem::path path = {});

    /// true when stored, false for a duplicate id. Throws on invalid events and
    /// on write failures.
    bool record(const FunnelEvent& e);
    std::vector<FunnelEvent> events() const;
    std::size_t size() const;

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::ofstream out_;
    std::vector<FunnelEvent> events_;
    std::unordered_set<std::string> ids_;
};

struct FunnelRates {
    std::size_t skill_cards = 0;
    std::size_t course_cards = 0;
    std::size_t go_to_course = 0;
    double course_per_skill = 0.0;
    double go_per_course = 0.0;
    bool course_per_skill_undefined = false;  // 0/0, reported as 0
    bool go_per_course_undefined = false;
};

FunnelRates funnel_rates(std::span<const FunnelEvent> events, Arm arm);

// ---------------------------------------------------------------------------
// Preference questionnaire

inline constexpr std::size_t kCardsPerList = 5;

/// System A is the control pipeline, system B the treatment.
enum class Choice { list_a_system, list_b_system, no_preference };
enum class Position { first, second, none };

std::string_view to_string(Choice choice);
Choice parse_choice(std::string_view text);
Position parse_position(std::string_view text);

struct DisplayPair {
    std::string query_id;
    std::string query_text;
    std::vector<CourseCard> list_one;
    std::vector<CourseCard> list_two;
    std::string token;  // maps display position to system server-side
};

nlohmann::json to_json(const DisplayPair& pair);

/// Top five of each system, system A first when a_first. Empty (with a
/// warning) when either system has fewer than five results.
std::optional<DisplayPair> questionnaire_pair(const Query& q, const std::vector<CourseCard>& system_a,
                                              const std::vector<CourseCard>& system_b, bool a_first,
                                              std::string token);

/// Maps the displayed position the respondent picked to the system behind it.
Choice resolve_choice(Position picked, bool a_first);

struct PreferenceResponse {
    std::string respondent;
    std::string query_id;
    Choice choice = Choice::no_preference;
    Arm shown_first = Arm::control_bm25;
    std::string reason;
};

nlohmann::json to_json(const PreferenceResponse& r);
PreferenceResponse response_from_json(const nlohmann::json& j);

struct PreferenceCounts {
    std::size_t system_a = 0;
    std::size_t system_b = 0;
    std::size_t no_preference = 0;

    std::size_t total() const { return system_a + system_b + no_preference; }
};

/// Last write wins per (respondent, query); persisted append-only and replayed
/// on open. An empty path keeps responses in memory only.
class ResponseStore {
public:
    explicit ResponseStore(std::filesystem::path path = {});

    /// Throws std::invalid_argument when the reason is blank.
    void record(const PreferenceResponse& r);
    PreferenceCounts aggregate(std::string_view query_id) const;
    std::map<std::string, PreferenceCounts> aggregate_all() const;
    std::size_t size() const;

private:
    void apply(const PreferenceResponse& r);

    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::ofstream out_;
    std::map<std::pair<std::string, std::string>, PreferenceResponse> latest_;
};

// ---------------------------------------------------------------------------
// HTTP service

struct ServiceOptions {
    PipelineConfig control;    // pipeline of control_bm25 / system A
    PipelineConfig treatment;  // pipeline of treatment_rankt5 / system B
    std::vector<Query> questionnaire_queries;
    std::size_t questionnaire_size = 10;
    std::optional<std::uint64_t> seed;  // random when unset
};

/// Request handlers as JSON in, JSON out; invalid input raises
/// std::invalid_argument, which the HTTP layer maps to status 400.
class Service {
public:
    Service(PipelineResources resources, ServiceOptions options, EventStore& events, ResponseStore& responses);

    nlohmann::json recommend(std::string_view skill, std::string_view occupation, std::int64_t user_id) const;
    nlohmann::json record_event(const nlohmann::json& body);
    nlohmann::json funnel(Arm arm) const;
    nlohmann::json questionnaire_pairs(const std::string& respondent);
    /// body: {"token", "choice": "first"|"second"|"none", "reason"}
    nlohmann::json submit_response(const nlohmann::json& body);
    nlohmann::json questionnaire_results() const;

    /// Registers every endpoint; static files under ui_dir are served at /ui when given.
    void mount(httplib::Server& server, const std::optional<std::filesystem::path>& ui_dir = std::nullopt);

private:
    struct Slot {
        std::string respondent;
        std::string query_id;
        bool a_first = true;
    };

    const PipelineConfig& config_for(Arm arm) const;
    std::string new_token();

    PipelineResources resources_;
    ServiceOptions options_;
    EventStore& events_;
    ResponseStore& responses_;

    std::mutex mutex_;
    std::mt19937_64 rng_;
    std::map<std::pair<std::string, std::string>, std::string> token_of_;  // (respondent, query) -> token
    std::map<std::string, Slot> slots_;                                     // token -> slot
};

}  // namespace skillrank
