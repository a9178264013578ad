// opendas command-line tool.
//
// Exit codes: 0 success, 2 validation failure, 3 runtime failure.

#include <opendas/opendas.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifdef OPENDAS_HTTP_CLIENT
#include <httplib.h>
#endif

namespace fs = std::filesystem;
using namespace opendas;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides; // key=value
    std::optional<std::uint64_t> seed;
    std::string stage_mode;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a, bool training) {
    cmd->add_option("-c,--config", a.path, "key = value config file");
    cmd->add_option("--set", a.overrides, "override a config key (key=value), repeatable");
    if (training) {
        cmd->add_option("--seed", a.seed, "training seed (beats OPENDAS_SEED and the config)");
        cmd->add_option("--stage-mode", a.stage_mode,
                        "two_stage_v_then_t | two_stage_t_then_v | joint | v_triplet_then_t_triplet");
    }
}

const char* const kPathKeys[] = {"train_manifest", "test_manifest", "negative_bank", "test_queries"};

RunConfig load_run_config(const ConfigArgs& a) {
    KeyValues kv;
    if (!a.path.empty()) {
        if (!fs::exists(a.path)) throw ValidationError("config file not found: " + a.path);
        kv = KeyValues::load(a.path);
        const auto dir = fs::absolute(a.path).parent_path();
        for (const char* key : kPathKeys) {
            auto it = kv.values().find(key);
            if (it == kv.values().end() || it->second.empty()) continue;
            fs::path p(it->second);
            if (p.is_relative()) kv.set(key, (dir / p).lexically_normal().string());
        }
    }
    for (const auto& o : a.overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects key=value, got '" + o + "'");
        kv.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (!a.stage_mode.empty()) kv.set("stage_mode", a.stage_mode);
    RunConfig c = parse_run_config(std::move(kv));
    if (a.seed) c.train.seed = *a.seed;
    return c;
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty()) throw ValidationError(what + " is not set");
    if (!fs::exists(path)) throw ValidationError(what + " not found: " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
    }
    return out;
}

std::vector<std::string> labels_of(const std::vector<SegmentRecord>& rs) {
    std::vector<std::string> out;
    for (const auto& r : rs) out.push_back(r.label);
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path);
}

// Everything a run needs besides the model weights.
struct RunData {
    std::vector<SegmentRecord> train;
    std::vector<SegmentRecord> test;
    NegativeBank bank;
    QuerySet queries;
};

RunData load_run_data(const RunConfig& c, bool need_train, bool need_test) {
    RunData d;
    if (need_train || !c.data.train_manifest.empty()) {
        require_file(c.data.train_manifest, "train_manifest");
        d.train = load_manifest(c.data.train_manifest);
        if (d.train.empty()) throw ValidationError("train manifest holds no records");
    }
    if (need_test || !c.data.test_manifest.empty()) {
        require_file(c.data.test_manifest, "test_manifest");
        d.test = load_manifest(c.data.test_manifest);
    }
    if (!c.data.negative_bank.empty()) {
        require_file(c.data.negative_bank, "negative_bank");
        d.bank = load_negative_bank(c.data.negative_bank);
    }
    std::vector<std::string> test_queries = labels_of(d.test);
    if (!c.eval.test_queries.empty()) {
        require_file(c.eval.test_queries, "test_queries");
        test_queries = read_lines(c.eval.test_queries);
    }
    if (!d.train.empty() && !test_queries.empty()) d.queries = split_queries(labels_of(d.train), test_queries);
    else if (!d.train.empty()) d.queries.train_queries = unique_in_order(labels_of(d.train));
    return d;
}

Vocabulary run_vocabulary(const RunData& d) {
    std::vector<std::string> phrases = d.queries.train_queries;
    phrases.insert(phrases.end(), d.queries.test_queries.begin(), d.queries.test_queries.end());
    return vocabulary_for(phrases, d.bank);
}

ModelState<float> model_for(const RunConfig& c, const RunData& d, const std::string& checkpoint) {
    if (!checkpoint.empty()) {
        require_file(checkpoint, "checkpoint");
        require_file(checkpoint + ".manifest", "checkpoint manifest");
        return load_checkpoint<float>(checkpoint);
    }
    return init_model<float>(c.model, run_vocabulary(d));
}

std::vector<TrainSample> load_samples_parallel(const std::vector<SegmentRecord>& records, Rgb fill, int size) {
    std::vector<TrainSample> out(records.size());
    std::vector<std::exception_ptr> errors(records.size());
    std::atomic<std::size_t> next{0};
    const unsigned n_threads = std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < records.size();) {
                try {
                    out[i] = {load_crop(records[i], fill, size).pixels, records[i].label};
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

// ---- commands ---------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SyntheticConfig cfg;
};

int cmd_synth(const SynthArgs& a) {
    if (a.out.empty()) throw ValidationError("--out is required");
    auto ds = generate_synthetic(a.cfg);
    write_synthetic(ds, a.out);
    RunConfig rc;
    rc.data.train_manifest = "train.jsonl";
    rc.data.test_manifest = "test.jsonl";
    rc.data.negative_bank = "negatives.json";
    write_text((fs::path(a.out) / "config.toml").string(), dump_run_config(rc));
    json j;
    j["out"] = fs::absolute(a.out).lexically_normal().string();
    j["records"] = ds.records.size();
    j["base"] = ds.base_queries();
    std::vector<std::string> novel;
    for (const auto& c : ds.classes)
        if (c.novel) novel.push_back(c.name);
    j["novel"] = novel;
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct PrepareArgs {
    ConfigArgs config;
    std::string manifest;
    std::string out;
    int size = 0;
};

int cmd_prepare(const PrepareArgs& a) {
    const RunConfig c = load_run_config(a.config);
    require_file(a.manifest, "manifest");
    if (a.out.empty()) throw ValidationError("--out is required");
    const int size = a.size > 0 ? a.size : c.model.vision.image_size;
    const auto records = load_manifest(a.manifest);
    const fs::path root = fs::absolute(a.out).lexically_normal();
    fs::create_directories(root / "crops");

    std::vector<SegmentRecord> prepared(records.size());
    std::vector<std::exception_ptr> errors(records.size());
    std::atomic<std::size_t> next{0};
    const unsigned n_threads = std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < records.size();) {
                try {
                    const auto& r = records[i];
                    auto crop = load_crop(r, c.data.fill_color, size);
                    SegmentRecord p = r;
                    p.image = (root / "crops" / (std::to_string(i) + "_seg" + std::to_string(r.segment_id) + ".png")).string();
                    p.mask.clear();
                    save_png_rgb(p.image, crop.pixels);
                    prepared[i] = std::move(p);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    save_manifest((root / "manifest.jsonl").string(), prepared);
    std::cout << "prepared " << prepared.size() << " crops (" << size << "x" << size << ") -> "
              << (root / "manifest.jsonl").string() << "\n";
    return 0;
}

struct NegativesArgs {
    ConfigArgs config;
    std::string manifest;
    std::vector<std::string> classes;
    std::string bank;
    std::string out;
    std::string endpoint;
};

std::vector<std::string> negatives_classes(const NegativesArgs& a) {
    if (!a.classes.empty()) return unique_in_order(a.classes);
    std::string manifest = a.manifest;
    if (manifest.empty() && !a.config.path.empty()) manifest = load_run_config(a.config).data.train_manifest;
    require_file(manifest, "manifest");
    return unique_in_order(labels_of(load_manifest(manifest)));
}

int cmd_negatives_template(const NegativesArgs& a) {
    write_text(a.out, build_instruction_prompt(negatives_classes(a)));
    return 0;
}

int cmd_negatives_validate(const NegativesArgs& a) {
    std::string path = a.bank;
    if (path.empty() && !a.config.path.empty()) path = load_run_config(a.config).data.negative_bank;
    require_file(path, "negative bank");
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    NegativeBank bank;
    try {
        bank = parse_negative_bank(ss.str());
    } catch (const ParseError&) {
        throw;
    } catch (const ValidationError&) {
        // re-parse without the invariant check to list every violation
        auto j = nlohmann::ordered_json::parse(ss.str());
        for (const auto& [k, v] : j.items()) bank.entries.emplace_back(k, v.get<std::vector<std::string>>());
    }
    auto problems = check_negative_bank(bank);
    if (!a.manifest.empty() || !a.classes.empty()) {
        for (const auto& q : negatives_classes(a)) {
            const auto* negs = bank.find(q);
            if (!negs) std::cerr << "warning: base query '" << q << "' has no negatives\n";
            else if (negs->empty()) std::cerr << "warning: base query '" << q << "' has an empty negative list\n";
        }
    }
    if (!problems.empty()) {
        for (const auto& p : problems) std::cout << "violation: " << p << "\n";
        return kExitValidation;
    }
    std::cout << "OK: " << bank.size() << " base queries, " << bank.negative_count() << " negatives\n";
    return 0;
}

int cmd_negatives_request([[maybe_unused]] const NegativesArgs& a) {
#ifdef OPENDAS_HTTP_CLIENT
    if (a.endpoint.empty()) throw ValidationError("--endpoint is required");
    if (a.out.empty()) throw ValidationError("--out is required");
    const auto scheme_end = a.endpoint.find("://");
    const auto path_start = a.endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string host = a.endpoint.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : a.endpoint.substr(path_start);
    httplib::Client client(host);
    auto res = client.Post(path, build_instruction_prompt(negatives_classes(a)), "text/plain");
    if (!res) throw Error("request to " + a.endpoint + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error("request to " + a.endpoint + " returned HTTP " + std::to_string(res->status));
    write_text(a.out, res->body);
    std::cout << "saved raw reply to " << a.out << "\n";
    return 0;
#else
    throw Error("this build has no HTTP client; reconfigure with -DOPENDAS_HTTP_CLIENT=ON");
#endif
}

struct TrainArgs {
    ConfigArgs config;
    std::string out = "opendas";
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    const RunConfig c = load_run_config(a.config);
    const RunData d = load_run_data(c, true, false);
    if (d.bank.empty() && c.train.stage_mode != StageMode::two_stage_v_then_t && c.train.stage_mode != StageMode::joint)
        std::cerr << "warning: empty negative bank\n";

    auto model = init_model<float>(c.model, run_vocabulary(d));
    const auto samples = load_samples_parallel(d.train, c.data.fill_color, c.model.vision.image_size);

    if (auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    const std::string log_path = a.out + ".log.jsonl";
    std::ofstream log_file(log_path);
    if (!log_file) throw IoError("cannot write " + log_path);
    TrainLog log(&log_file);

    auto save_stage1 = [&](const ModelState<float>& m) { save_checkpoint(m, a.out + ".stage1"); };
    auto result = run_adaptation(std::move(model), samples, d.queries.train_queries, d.bank, c.train, c.loss, log,
                                 save_stage1);
    if (c.train.stage_mode == StageMode::joint) save_checkpoint(result.state, a.out + ".stage1");
    save_checkpoint(result.state, a.out + ".final");
    write_text(a.out + ".config.toml", dump_run_config(c));

    if (!a.quiet) {
        json j;
        j["final"] = a.out + ".final";
        j["stage1"] = a.out + ".stage1";
        j["log"] = log_path;
        j["steps"] = result.log.size();
        j["stage_mode"] = to_string(c.train.stage_mode);
        j["seed"] = c.train.seed;
        if (!result.log.empty()) j["final_loss"] = result.log.back().loss_total;
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

struct EvalArgs {
    ConfigArgs config;
    std::string checkpoint;
    std::string out;
    bool macro = false;
};

int cmd_eval(const EvalArgs& a) {
    const RunConfig c = load_run_config(a.config);
    const RunData d = load_run_data(c, true, true);
    if (d.test.empty()) throw ValidationError("test manifest holds no records");
    const auto model = model_for(c, d, a.checkpoint);
    const auto samples = load_samples_parallel(d.test, c.data.fill_color, model.config.vision.image_size);
    const auto report = evaluate(model, samples, d.queries);

    json j = to_json(report);
    j["f1_averaging"] = a.macro ? "macro" : "weighted";
    if (a.macro) {
        j["base_f1"] = j["base_f1_macro"];
        j["novel_f1"] = j["novel_f1_macro"];
    }
    j["checkpoint"] = a.checkpoint.empty() ? json() : json(a.checkpoint);
    j["queries"] = split_report(d.queries)["counts"];
    write_text(a.out, j.dump(2) + "\n");
    if (!a.out.empty() && a.out != "-") {
        auto fmt = [](const json& v) { return v.is_null() ? std::string("n/a") : format_double(v.get<double>()); };
        std::cout << "Acc " << report.accuracy << "  W-F1 " << report.weighted_f1 << "  B-F1 " << fmt(j["base_f1"])
                  << "  N-F1 " << fmt(j["novel_f1"]) << "  -> " << a.out << "\n";
    }
    return 0;
}

struct PredictArgs {
    ConfigArgs config;
    std::string checkpoint;
    std::string image;
    std::string mask;
    std::vector<std::string> queries;
    std::string queries_file;
};

int cmd_predict(const PredictArgs& a) {
    const RunConfig c = load_run_config(a.config);
    require_file(a.image, "image");
    std::vector<std::string> queries = a.queries;
    if (!a.queries_file.empty()) {
        require_file(a.queries_file, "queries file");
        auto more = read_lines(a.queries_file);
        queries.insert(queries.end(), more.begin(), more.end());
    }
    if (queries.empty()) throw ValidationError("predict needs at least one --query or --queries-file");
    const auto model = model_for(c, RunData{.queries = split_queries(queries, queries)}, a.checkpoint);

    SegmentRecord r;
    r.image = a.image;
    r.mask = a.mask;
    const auto crop = load_crop(r, c.data.fill_color, model.config.vision.image_size);
    const auto p = predict(forward_image(crop.pixels, model), embed_queries(model, queries));

    json j;
    j["label"] = queries[p.index];
    j["index"] = p.index;
    json scores = json::object();
    for (std::size_t n = 0; n < queries.size(); ++n) scores[queries[n]] = p.scores[n];
    j["scores"] = scores;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_count_params(const ConfigArgs& a) {
    const RunConfig c = load_run_config(a);
    const auto& p = c.model.prompts;
    const std::int64_t visual = std::int64_t{p.depth_v} * p.width_v * c.model.vision.width;
    const std::int64_t textual = std::int64_t{p.depth_t} * p.width_t * c.model.text.width;
    json j;
    j["total"] = count_prompt_params(c.model.vision, c.model.text, p);
    j["visual"] = {{"depth", p.depth_v}, {"width", p.width_v}, {"dim", c.model.vision.width}, {"params", visual}};
    j["textual"] = {{"depth", p.depth_t}, {"width", p.width_t}, {"dim", c.model.text.width}, {"params", textual}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct ExportArgs {
    ConfigArgs config;
    std::string checkpoint;
    std::string out;
    std::string kind = "visual";
    std::string split = "test";
};

int cmd_export(const ExportArgs& a) {
    if (a.out.empty()) throw ValidationError("--out is required");
    const RunConfig c = load_run_config(a.config);
    const RunData d = load_run_data(c, true, a.split != "train");
    const auto model = model_for(c, d, a.checkpoint);
    std::vector<RowVector<float>> rows;
    std::vector<std::string> labels;
    if (a.kind == "text") {
        labels = d.queries.test_queries.empty() ? d.queries.train_queries : d.queries.test_queries;
        rows = embed_queries(model, labels);
    } else if (a.kind == "visual") {
        std::vector<SegmentRecord> records;
        if (a.split == "train" || a.split == "all") records.insert(records.end(), d.train.begin(), d.train.end());
        if (a.split == "test" || a.split == "all") records.insert(records.end(), d.test.begin(), d.test.end());
        if (a.split != "train" && a.split != "test" && a.split != "all")
            throw ValidationError("--split must be train, test or all");
        for (const auto& s : load_samples_parallel(records, c.data.fill_color, model.config.vision.image_size)) {
            rows.push_back(forward_image(s.pixels, model));
            labels.push_back(s.label);
        }
    } else {
        throw ValidationError("--kind must be visual or text");
    }
    export_embeddings(rows, labels, a.out);
    std::cout << "exported " << rows.size() << " x " << (rows.empty() ? 0 : rows.front().size()) << " -> " << a.out
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prompt adaptation of a frozen dual encoder for open-vocabulary segment classification"};
    app.set_version_flag("--version", "opendas 0.1.0");
    bool dump_defaults = false;
    app.add_flag("--dump-defaults", dump_defaults, "print the default config and exit");
    app.require_subcommand(0, 1);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "generate the synthetic shapes dataset");
    c_synth->add_option("-o,--out", synth.out, "output directory")->required();
    c_synth->add_option("--classes", synth.cfg.num_classes);
    c_synth->add_option("--per-class", synth.cfg.per_class);
    c_synth->add_option("--image-size", synth.cfg.image_size);
    c_synth->add_option("--novel-fraction", synth.cfg.novel_fraction);
    c_synth->add_option("--test-fraction", synth.cfg.test_fraction);
    c_synth->add_option("--seed", synth.cfg.seed);

    PrepareArgs prep;
    auto* c_prep = app.add_subcommand("prepare", "mask, fill and crop every record of a manifest");
    add_config_options(c_prep, prep.config, false);
    c_prep->add_option("-m,--manifest", prep.manifest)->required();
    c_prep->add_option("-o,--out", prep.out, "output directory")->required();
    c_prep->add_option("--size", prep.size, "crop side (default: image_size)");

    NegativesArgs neg;
    auto* c_neg = app.add_subcommand("negatives", "negative-query bank tooling");
    c_neg->require_subcommand(1);
    auto add_class_sources = [&](CLI::App* cmd) {
        add_config_options(cmd, neg.config, false);
        cmd->add_option("-m,--manifest", neg.manifest, "manifest whose labels are the base queries");
        cmd->add_option("--class", neg.classes, "base query, repeatable");
    };
    auto* c_tmpl = c_neg->add_subcommand("template", "write the generation instruction for the base queries");
    add_class_sources(c_tmpl);
    c_tmpl->add_option("-o,--out", neg.out, "output file (default stdout)");
    auto* c_val = c_neg->add_subcommand("validate", "check a negative bank file");
    add_class_sources(c_val);
    c_val->add_option("-b,--bank", neg.bank);
    auto* c_req = c_neg->add_subcommand("request", "POST the instruction to an HTTP endpoint, save the raw reply");
    add_class_sources(c_req);
    c_req->add_option("--endpoint", neg.endpoint);
    c_req->add_option("-o,--out", neg.out);

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "two-stage prompt adaptation");
    add_config_options(c_train, train.config, true);
    c_train->add_option("-o,--out", train.out, "output prefix for checkpoints and log");
    c_train->add_flag("-q,--quiet", train.quiet);

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "score a checkpoint (or the untrained model) on the test manifest");
    add_config_options(c_eval, ev.config, false);
    c_eval->add_option("--checkpoint", ev.checkpoint, "omit to evaluate the unadapted model");
    c_eval->add_option("-o,--out", ev.out, "report JSON (default stdout)");
    c_eval->add_flag("--macro", ev.macro, "report unweighted B-F1/N-F1");

    PredictArgs pred;
    auto* c_pred = app.add_subcommand("predict", "classify one segment");
    add_config_options(c_pred, pred.config, false);
    c_pred->add_option("--checkpoint", pred.checkpoint);
    c_pred->add_option("--image", pred.image)->required();
    c_pred->add_option("--mask", pred.mask, "mask PNG or rle:H W runs (default: whole image)");
    c_pred->add_option("-q,--query", pred.queries, "candidate query, repeatable");
    c_pred->add_option("--queries-file", pred.queries_file);

    ConfigArgs count;
    auto* c_count = app.add_subcommand("count-params", "number of trainable prompt parameters");
    add_config_options(c_count, count, false);

    ExportArgs exp;
    auto* c_exp = app.add_subcommand("export-embeddings", "dump embeddings for external visualization");
    add_config_options(c_exp, exp.config, false);
    c_exp->add_option("--checkpoint", exp.checkpoint);
    c_exp->add_option("-o,--out", exp.out)->required();
    c_exp->add_option("--kind", exp.kind, "visual | text");
    c_exp->add_option("--split", exp.split, "train | test | all (visual only)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (dump_defaults) {
            std::cout << dump_run_config(RunConfig{});
            return 0;
        }
        if (*c_synth) return cmd_synth(synth);
        if (*c_prep) return cmd_prepare(prep);
        if (*c_tmpl) return cmd_negatives_template(neg);
        if (*c_val) return cmd_negatives_validate(neg);
        if (*c_req) return cmd_negatives_request(neg);
        if (*c_train) return cmd_train(train);
        if (*c_eval) return cmd_eval(ev);
        if (*c_pred) return cmd_predict(pred);
        if (*c_count) return cmd_count_params(count);
        if (*c_exp) return cmd_export(exp);
        std::cout << app.help();
        return kExitValidation;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
