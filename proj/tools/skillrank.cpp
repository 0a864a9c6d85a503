// SPDX-License-Identifier: Apache-2.0
// skillrank command line interface.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "skillrank/bench.hpp"
#include "skillrank/corpus.hpp"
#include "skillrank/dense_index.hpp"
#include "skillrank/eval.hpp"
#include "skillrank/lexical_index.hpp"
#include "skillrank/quant.hpp"
#include "skillrank/ranker.hpp"
#include "skillrank/service.hpp"

using namespace skillrank;
using nlohmann::json;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(line);
    return lines;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
}

/// Vocabulary words plus however many hash buckets fill the model's vocab.
WordTokenizer tokenizer_for(const std::string& vocab_path, const EncoderConfig& config) {
    auto words = read_lines(vocab_path);
    const auto buckets = config.vocab_size - WordTokenizer::kFirstWord - static_cast<std::int32_t>(words.size());
    if (buckets < 1)
        throw std::runtime_error("vocabulary of " + std::to_string(words.size()) + " words does not fit model vocab " +
                                 std::to_string(config.vocab_size));
    return WordTokenizer(std::move(words), buckets);
}

/// Quantizes on the fly when an FP32 archive is paired with --scheme dynamic.
Model load_for_scheme(const std::string& path, const std::string& scheme_text) {
    Model model = load_model(path);
    const QuantScheme scheme = parse_scheme(scheme_text);
    if (scheme == QuantScheme::none || model.scheme != "none") {
        if (scheme != QuantScheme::none && model.scheme != to_string(scheme))
            spdlog::warn("archive holds a '{}' model; --scheme {} ignored", model.scheme, scheme_text);
        return model;
    }
    if (scheme != QuantScheme::dynamic)
        throw std::runtime_error("scheme " + scheme_text + " needs calibration; run 'skillrank quantize' first");
    QuantConfig qc;
    qc.scheme = scheme;
    return apply_quantization(model, qc);
}

std::map<std::string, Query> queries_by_id(const std::string& path) {
    std::map<std::string, Query> out;
    for (auto& q : load_queries(path)) out.emplace(q.id, q);
    return out;
}

void print_report(const EvalReport& report) {
    std::printf("%-12s", "query");
    for (const auto& m : report.metrics) std::printf(" %10s", m.name().c_str());
    std::printf("\n");
    for (const auto& q : report.query_ids) {
        std::printf("%-12s", q.c_str());
        for (double v : report.per_query.at(q)) std::printf(" %10.4f", v);
        std::printf("\n");
    }
    std::printf("%-12s", "mean");
    for (double v : report.means) std::printf(" %10.4f", v);
    std::printf("\n");
}

std::vector<TokenBatch> text_batches(const std::vector<std::string>& texts, const Tokenizer& tok, std::size_t max_len,
                                     std::size_t batch_size) {
    std::vector<TokenBatch> batches;
    std::vector<std::vector<TokenId>> seqs;
    for (const auto& t : texts) {
        auto ids = truncate_tokens(tok.encode(t), max_len);
        if (ids.empty()) continue;
        seqs.push_back(std::move(ids));
        if (seqs.size() == batch_size) {
            batches.push_back(make_batch(seqs, tok.pad_id()));
            seqs.clear();
        }
    }
    if (!seqs.empty()) batches.push_back(make_batch(seqs, tok.pad_id()));
    return batches;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"skillrank: two-stage course recommender"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Load and validate a course file; print length statistics");
    std::string courses_path, vocab_path, out_path;
    std::size_t limit = 512;
    ingest->add_option("--courses", courses_path, "Course JSONL")->required();
    ingest->add_option("--vocab", vocab_path, "Vocabulary for length statistics");
    ingest->add_option("--limit", limit, "Token limit for the over-limit fraction");
    ingest->add_option("--out", out_path, "Write the cleaned records as JSONL");

    // prompt
    auto* prompt = app.add_subcommand("prompt", "Print the summarization prompt of one course");
    std::string doc_id;
    prompt->add_option("--courses", courses_path)->required();
    prompt->add_option("--id", doc_id)->required();

    // index
    auto* index = app.add_subcommand("index", "Build the field-weighted BM25 index");
    std::string variant_text = "original";
    Bm25Params bm25;
    index->add_option("--courses", courses_path)->required();
    index->add_option("--variant", variant_text, "original | summary:<name>");
    index->add_option("--k1", bm25.k1);
    index->add_option("--b", bm25.b);
    index->add_option("--title-weight", bm25.title_weight);
    index->add_option("--desc-weight", bm25.desc_weight);
    index->add_option("--title-boost", bm25.exact_title_boost);
    index->add_option("--out", out_path)->required();

    // search
    auto* search_cmd = app.add_subcommand("search", "BM25 retrieval for a query file");
    std::string index_path, queries_path, run_tag;
    std::size_t k = 100;
    search_cmd->add_option("--index", index_path)->required();
    search_cmd->add_option("--queries", queries_path)->required();
    search_cmd->add_option("--k", k);
    search_cmd->add_option("--out", out_path)->required();

    // dense
    auto* dense = app.add_subcommand("dense", "Cosine top-k over precomputed embeddings");
    std::string doc_emb_path, query_emb_path;
    dense->add_option("--embeddings", doc_emb_path, "Document embeddings")->required();
    dense->add_option("--query-embeddings", query_emb_path, "Embeddings keyed by query text")->required();
    dense->add_option("--queries", queries_path)->required();
    dense->add_option("--k", k);
    dense->add_option("--out", out_path)->required();

    // pool
    auto* pool = app.add_subcommand("pool", "Interleave two runs into a judging pool");
    std::string run_a, run_b;
    std::size_t depth = 50;
    pool->add_option("--run-a", run_a)->required();
    pool->add_option("--run-b", run_b)->required();
    pool->add_option("--depth", depth);
    pool->add_option("--out", out_path)->required();

    // init-model
    auto* init = app.add_subcommand("init-model", "Write a randomly initialized encoder");
    EncoderConfig ec{.vocab_size = 512, .d_model = 256, .n_layers = 4, .n_heads = 4, .d_ff = 1024};
    std::uint64_t seed = 1;
    init->add_option("--vocab-size", ec.vocab_size);
    init->add_option("--d-model", ec.d_model);
    init->add_option("--layers", ec.n_layers);
    init->add_option("--heads", ec.n_heads);
    init->add_option("--d-ff", ec.d_ff);
    init->add_option("--max-len", ec.max_input_len);
    init->add_option("--seed", seed);
    init->add_option("--out", out_path)->required();

    // quantize
    auto* quantize = app.add_subcommand("quantize", "Convert an FP32 archive to INT8");
    std::string weights_path, scheme_text = "dynamic", calib_path;
    QuantConfig qc;
    std::size_t max_len = 256;
    quantize->add_option("--weights", weights_path)->required();
    quantize->add_option("--scheme", scheme_text, "dynamic | static | smoothquant");
    quantize->add_option("--alpha", qc.alpha, "SmoothQuant migration strength");
    quantize->add_option("--percentile", qc.calibration_percentile, "Static activation range percentile");
    quantize->add_option("--calib", calib_path, "Calibration texts, one per line");
    quantize->add_option("--vocab", vocab_path);
    quantize->add_option("--max-len", max_len);
    quantize->add_flag("--smooth-only", qc.smooth_only, "Migrate scales without quantizing");
    quantize->add_option("--out", out_path)->required();

    // rerank
    auto* rerank_cmd = app.add_subcommand("rerank", "Re-rank a run with the encoder");
    std::string run_path, pooling_text = "first";
    RerankConfig rc;
    rerank_cmd->add_option("--weights", weights_path)->required();
    rerank_cmd->add_option("--scheme", scheme_text = "none");
    rerank_cmd->add_option("--depth", rc.depth);
    rerank_cmd->add_option("--max-len", rc.max_input_len);
    rerank_cmd->add_option("--variant", variant_text);
    rerank_cmd->add_flag("--skill-desc", rc.include_skill_desc, "Append the skill description to the query");
    rerank_cmd->add_option("--pooling", pooling_text, "first | mean");
    rerank_cmd->add_option("--run", run_path)->required();
    rerank_cmd->add_option("--courses", courses_path)->required();
    rerank_cmd->add_option("--queries", queries_path)->required();
    rerank_cmd->add_option("--vocab", vocab_path)->required();
    rerank_cmd->add_option("--out", out_path)->required();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score a run against qrels");
    std::string qrels_path, metrics_text = "ndcg@10,mrr@10,map@10,recall@20", compare_path;
    bool ttest = false, linear_gain = false;
    double alpha = 0.05;
    std::size_t comparisons = 1;
    evaluate->add_option("--run", run_path)->required();
    evaluate->add_option("--qrels", qrels_path)->required();
    evaluate->add_option("--metrics", metrics_text);
    evaluate->add_option("--compare", compare_path, "Second run for a paired comparison");
    evaluate->add_flag("--ttest", ttest, "Paired t-test per metric against --compare");
    evaluate->add_option("--alpha", alpha);
    evaluate->add_option("--comparisons", comparisons, "Bonferroni comparison count");
    evaluate->add_flag("--linear-gain", linear_gain, "nDCG with gain g instead of 2^g - 1");

    // bench
    auto* bench = app.add_subcommand("bench", "Throughput benchmark");
    std::string pairs_path;
    BenchProtocol protocol;
    std::size_t len = 256;
    bench->add_option("--weights", weights_path)->required();
    bench->add_option("--scheme", scheme_text = "none");
    bench->add_option("--len", len);
    bench->add_option("--reps", protocol.repetitions);
    bench->add_option("--batch", protocol.batch_size);
    bench->add_option("--warmup", protocol.warmup_queries);
    bench->add_option("--measured", protocol.measured_pairs);
    bench->add_option("--threads", protocol.threads);
    bench->add_option("--pairs", pairs_path, "Re-rank input texts, one per line")->required();
    bench->add_option("--vocab", vocab_path)->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::string config_path, host = "0.0.0.0";
    int port = 8080;
    serve->add_option("--config", config_path, "JSON service configuration")->required();
    serve->add_option("--host", host);
    serve->add_option("--port", port);

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*ingest) {
            const Corpus corpus = ingest_courses(courses_path);
            std::printf("courses: %zu\n", corpus.size());
            if (!vocab_path.empty()) {
                const auto words = read_lines(vocab_path);
                WordTokenizer tok(words, 1024);
                const auto stats = corpus_stats(corpus, tok, limit);
                std::printf("over %zu tokens: %zu (%.4f)\n", limit, stats.over_limit, stats.over_limit_fraction);
                for (const auto& [provider, counts] : stats.histogram) {
                    std::printf("%-16s", std::string(to_string(provider)).c_str());
                    for (auto c : counts) std::printf(" %zu", c);
                    std::printf("\n");
                }
            }
            if (!out_path.empty()) {
                auto out = open_out(out_path);
                for (const auto& d : corpus) {
                    json j{{"id", d.id}, {"provider", to_string(d.provider)}, {"title", d.title},
                           {"description", d.description}, {"summaries", d.summaries}};
                    if (d.level) j["level"] = *d.level;
                    if (d.rating) j["rating"] = *d.rating;
                    if (d.url) j["url"] = *d.url;
                    out << j.dump() << '\n';
                }
            }
        } else if (*prompt) {
            std::cout << build_summarization_prompt(ingest_courses(courses_path).at(doc_id)) << '\n';
        } else if (*index) {
            const auto idx = index_corpus(ingest_courses(courses_path), FieldVariant::parse(variant_text), bm25);
            save_index(idx, out_path);
            std::printf("indexed %zu documents\n", idx.doc_ids().size());
        } else if (*search_cmd) {
            const auto idx = load_index(index_path);
            Run run;
            for (const auto& q : load_queries(queries_path)) run.emplace(q.id, search(idx, q, k));
            auto out = open_out(out_path);
            write_run(out, run, "bm25");
        } else if (*dense) {
            const auto docs = load_embeddings(doc_emb_path);
            const auto qemb = load_embeddings(query_emb_path);
            Run run;
            for (const auto& q : load_queries(queries_path)) {
                const auto vec = qemb.find(build_query_text(q));
                if (vec.empty()) {
                    spdlog::warn("no embedding for query {} ('{}')", q.id, build_query_text(q));
                    continue;
                }
                run.emplace(q.id, cosine_topk(docs, vec, k, q.id));
                const auto quality = pool_quality_check(docs, vec);
                if (!quality.pass)
                    spdlog::warn("query {}: only {} documents reach similarity 0.6", q.id, quality.count);
            }
            auto out = open_out(out_path);
            write_run(out, run, "dense");
        } else if (*pool) {
            const Run a = load_run(run_a), b = load_run(run_b);
            Run pooled;
            for (const auto& [qid, list] : a) {
                auto it = b.find(qid);
                const ScoredList empty{qid, {}, Stage::dense};
                const auto ids = interleave_pools(list, it == b.end() ? empty : it->second, depth);
                ScoredList sl{qid, {}, Stage::lexical};
                for (std::size_t i = 0; i < ids.size(); ++i)
                    sl.entries.push_back({ids[i], static_cast<double>(ids.size() - i)});
                pooled.emplace(qid, std::move(sl));
            }
            auto out = open_out(out_path);
            write_run(out, pooled, "pool");
        } else if (*init) {
            save_model(init_random_model(ec, seed), out_path);
            std::printf("wrote %s\n", out_path.c_str());
        } else if (*quantize) {
            const Model model = load_model(weights_path);
            qc.scheme = parse_scheme(scheme_text);
            std::unique_ptr<CalibrationStats> stats;
            if (qc.scheme == QuantScheme::static_calibrated || qc.scheme == QuantScheme::smoothquant) {
                if (calib_path.empty() || vocab_path.empty())
                    throw std::runtime_error("scheme " + scheme_text + " needs --calib and --vocab");
                const auto tok = tokenizer_for(vocab_path, model.config);
                const auto batches = text_batches(read_lines(calib_path), tok, max_len, 16);
                stats = std::make_unique<CalibrationStats>(calibrate(model, batches, qc));
            }
            const Model q = apply_quantization(model, qc, stats.get());
            save_model(q, out_path);
            std::printf("%s: %zu -> %zu bytes\n", q.scheme.c_str(), model_size_bytes(model), model_size_bytes(q));
        } else if (*rerank_cmd) {
            const Model model = load_for_scheme(weights_path, scheme_text);
            rc.variant = FieldVariant::parse(variant_text);
            rc.pooling = parse_pooling(pooling_text);
            rc.validate(&model.config);
            const auto tok = tokenizer_for(vocab_path, model.config);
            const Corpus corpus = ingest_courses(courses_path);
            const auto queries = queries_by_id(queries_path);
            Run out_run;
            for (const auto& [qid, list] : load_run(run_path)) {
                auto q = queries.find(qid);
                if (q == queries.end()) {
                    spdlog::warn("query {} not in the query file; skipped", qid);
                    continue;
                }
                out_run.emplace(qid, rerank(model, tok, corpus, q->second, list, rc));
            }
            auto out = open_out(out_path);
            write_run(out, out_run, "rerank-" + model.scheme);
        } else if (*evaluate) {
            const Qrels qrels = load_qrels(qrels_path);
            const auto metrics = parse_metric_list(metrics_text);
            const Gain gain = linear_gain ? Gain::linear : Gain::exponential;
            const auto report = evaluate_run(load_run(run_path), qrels, metrics, gain);
            print_report(report);
            if (!compare_path.empty()) {
                const auto other = evaluate_run(load_run(compare_path), qrels, metrics, gain);
                std::printf("\ncompared with %s\n", compare_path.c_str());
                for (std::size_t m = 0; m < metrics.size(); ++m) {
                    std::printf("%-10s %.4f vs %.4f", metrics[m].name().c_str(), report.means[m], other.means[m]);
                    if (ttest) {
                        const auto a = report.column(m), b = other.column(m);
                        const auto t = paired_ttest(a, b, alpha, comparisons);
                        std::printf("  t=%.4f p=%.6f threshold=%.6f %s", t.t, t.p, t.threshold,
                                    t.significant ? "significant" : "not significant");
                    }
                    std::printf("\n");
                }
            }
        } else if (*bench) {
            const Model model = load_for_scheme(weights_path, scheme_text);
            const auto tok = tokenizer_for(vocab_path, model.config);
            std::vector<std::vector<TokenId>> pairs;
            std::size_t total = 0;
            for (const auto& line : read_lines(pairs_path)) {
                pairs.push_back(truncate_tokens(tok.encode(line), len));
                total += pairs.back().size();
            }
            if (!pairs.empty())
                spdlog::info("{} pairs, mean length {:.1f} tokens", pairs.size(),
                             static_cast<double>(total) / static_cast<double>(pairs.size()));
            protocol.input_len = len;
            const auto result = measure_throughput(model, pairs, protocol);
            std::cout << bench_report({result});
        } else if (*serve) {
            std::ifstream in(config_path);
            if (!in) throw std::runtime_error("cannot open " + config_path);
            const json cfg = json::parse(in);
            const Corpus corpus = ingest_courses(cfg.at("corpus").get<std::string>());
            const auto lexical = index_corpus(corpus, FieldVariant::parse(cfg.value("index_variant", std::string("original"))));
            PipelineResources res;
            res.corpus = &corpus;
            res.lexical = &lexical;
            EmbeddingStore docs, qemb;
            if (cfg.contains("doc_embeddings")) {
                docs = load_embeddings(cfg.at("doc_embeddings").get<std::string>());
                res.doc_embeddings = &docs;
            }
            if (cfg.contains("query_embeddings")) {
                qemb = load_embeddings(cfg.at("query_embeddings").get<std::string>());
                res.query_embeddings = &qemb;
            }
            ServiceOptions options;
            options.control = PipelineConfig::from_json(cfg.value("control", json::object()));
            options.treatment = PipelineConfig::from_json(cfg.value("treatment", json::object()));
            if (cfg.contains("seed")) options.seed = cfg.at("seed").get<std::uint64_t>();
            std::unique_ptr<Model> model;
            std::unique_ptr<WordTokenizer> tok;
            if (cfg.contains("weights")) {
                model = std::make_unique<Model>(
                    load_for_scheme(cfg.at("weights").get<std::string>(), std::string(to_string(options.treatment.quant))));
                tok = std::make_unique<WordTokenizer>(tokenizer_for(cfg.at("vocab").get<std::string>(), model->config));
                res.model = model.get();
                res.tokenizer = tok.get();
            }
            if (cfg.contains("queries")) {
                options.questionnaire_queries = load_queries(cfg.at("queries").get<std::string>());
                for (const auto& q : options.questionnaire_queries)
                    if (q.skill_description) res.skill_descriptions.emplace(q.skill, *q.skill_description);
            }
            EventStore events(cfg.value("events", std::string()));
            ResponseStore responses(cfg.value("responses", std::string()));
            Service service(std::move(res), std::move(options), events, responses);
            httplib::Server server;
            std::optional<std::filesystem::path> ui;
            if (cfg.contains("ui_dir")) ui = cfg.at("ui_dir").get<std::string>();
            service.mount(server, ui);
            spdlog::info("listening on {}:{}", host, port);
            if (!server.listen(host, port)) throw std::runtime_error("cannot listen on port " + std::to_string(port));
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
