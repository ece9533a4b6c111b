// birdrone command line front end.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure,
// 3 verification failure (gradient checks that ran and did not pass).

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "birdrone/birdrone.hpp"
#include "json.hpp"

using json = nlohmann::json;
using namespace brd;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct VerifyFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using KvList = std::vector<std::pair<std::string, std::string>>;

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

// Flat key=value config files. '#' starts a comment, blank lines are skipped,
// order is preserved so the file can be echoed back verbatim.
KvList read_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config file '" + path + "'");
    KvList kv;
    std::string line;
    int ln = 0;
    while (std::getline(is, line)) {
        ++ln;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(ln) + ": expected key=value, got '" +
                             line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw UsageError(path + ":" + std::to_string(ln) + ": empty key");
        if (key == "config")
            throw UsageError(path + ":" + std::to_string(ln) + ": config files cannot nest");
        kv.emplace_back(key, val);
    }
    return kv;
}

// Turns a config file into extra command line flags, inserted right after the
// subcommand so explicit flags win. Keys already given on the command line
// are dropped here; unknown keys survive and fail parsing by name.
std::vector<std::string> effective_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string cfg;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size())
            cfg = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0)
            cfg = args[i].substr(9);
    }
    if (cfg.empty()) return args;
    if (args.empty() || args[0].empty() || args[0][0] == '-')
        throw UsageError("--config needs a command before it");
    std::set<std::string> given;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i].rfind("--", 0) != 0) continue;
        std::string name = args[i].substr(2);
        const auto eq = name.find('=');
        if (eq != std::string::npos) name.erase(eq);
        given.insert(name);
    }
    std::vector<std::string> out{args[0]};
    for (const auto& [k, v] : read_kv_file(cfg))
        if (!given.count(k)) out.push_back("--" + k + "=" + v);
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
}

// Prints the fully resolved settings and, when an output directory is known,
// writes them to <dir>/config_resolved.txt in the same key=value format the
// --config option reads back.
void echo_config(const KvList& kv, const std::string& out_dir) {
    std::string text;
    for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
    std::cout << "resolved config:\n";
    for (const auto& [k, v] : kv) std::cout << "  " << k << " = " << v << "\n";
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream os(std::filesystem::path(out_dir) / "config_resolved.txt");
        require(static_cast<bool>(os), "cannot write config_resolved.txt under " + out_dir);
        os << text;
    }
}

int resolve_threads(int flag_val) {
    if (flag_val > 0) return flag_val;
    if (const char* env = std::getenv("BDRN_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

struct Preset {
    bool aelan, mpda, rmpda;
};

const std::map<std::string, Preset>& presets() {
    static const std::map<std::string, Preset> m = {
        {"m1", {false, false, false}}, {"m2", {true, false, false}},
        {"m3", {false, true, false}},  {"m4", {false, false, true}},
        {"m5", {false, true, true}},   {"m6", {true, true, true}},
    };
    return m;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [k, v] : presets()) names.push_back(k);
    return names;
}

std::string class_name(int k, int num_classes) {
    if (num_classes == 2) return k == 0 ? "drone" : "bird";
    return "class" + std::to_string(k);
}

std::map<std::string, std::string> read_meta(const std::string& data_dir) {
    std::map<std::string, std::string> meta;
    const auto path = std::filesystem::path(data_dir) / "meta.txt";
    if (!std::filesystem::exists(path)) return meta;
    for (const auto& [k, v] : read_kv_file(path.string())) meta[k] = v;
    return meta;
}

int meta_int(const std::map<std::string, std::string>& meta, const std::string& key,
             int fallback) {
    const auto it = meta.find(key);
    return it == meta.end() ? fallback : std::atoi(it->second.c_str());
}

std::array<double, 3> parse_ratios(const std::string& s) {
    std::array<double, 3> r{};
    std::stringstream ss(s);
    std::string tok;
    int k = 0;
    while (std::getline(ss, tok, ',')) {
        if (k >= 3)
            throw UsageError("--split wants three comma-separated ratios, got '" + s + "'");
        try {
            std::size_t pos = 0;
            r[k] = std::stod(trim(tok), &pos);
            if (pos != trim(tok).size()) throw std::invalid_argument(tok);
        } catch (...) {
            throw UsageError("bad ratio '" + tok + "' in --split");
        }
        ++k;
    }
    if (k != 3)
        throw UsageError("--split wants three comma-separated ratios, got '" + s + "'");
    return r;
}

// ---------------------------------------------------------------------------
// generate

struct GenArgs {
    std::string out, config;
    std::string split = "0.7,0.2,0.1";
    int count = 128, seed = 42, image_size = 160, channels = 1;
    int min_objects = 1, max_objects = 4, scale_min = 8, scale_max = 64;
    int split_seed = 7, threads = 0;
    double drone_prob = 0.5, clutter = 0.6, occlusion = 0.25, blur = 0.25, boundary = 0.15;
    double small_bias = 0.0;
    bool force = false;
};

int run_generate(const GenArgs& a) {
    namespace fs = std::filesystem;
    const auto ratios = parse_ratios(a.split);
    if (fs::exists(a.out) && !fs::is_empty(a.out) && !a.force)
        throw std::runtime_error("output directory '" + a.out +
                                 "' is not empty (pass --force to write into it)");
    const int threads = resolve_threads(a.threads);

    KvList kv = {{"out", a.out},
                 {"count", std::to_string(a.count)},
                 {"seed", std::to_string(a.seed)},
                 {"image-size", std::to_string(a.image_size)},
                 {"channels", std::to_string(a.channels)},
                 {"min-objects", std::to_string(a.min_objects)},
                 {"max-objects", std::to_string(a.max_objects)},
                 {"drone-prob", fmt("%.10g", a.drone_prob)},
                 {"scale-min", std::to_string(a.scale_min)},
                 {"scale-max", std::to_string(a.scale_max)},
                 {"small-bias", fmt("%.10g", a.small_bias)},
                 {"clutter", fmt("%.10g", a.clutter)},
                 {"occlusion", fmt("%.10g", a.occlusion)},
                 {"blur", fmt("%.10g", a.blur)},
                 {"boundary", fmt("%.10g", a.boundary)},
                 {"split", a.split},
                 {"split-seed", std::to_string(a.split_seed)},
                 {"threads", std::to_string(threads)}};
    echo_config(kv, a.out);

    SceneSpec spec;
    spec.image_size = a.image_size;
    spec.channels = a.channels;
    spec.min_objects = a.min_objects;
    spec.max_objects = a.max_objects;
    spec.drone_prob = a.drone_prob;
    spec.scale_min = a.scale_min;
    spec.scale_max = a.scale_max;
    spec.small_bias = a.small_bias;
    spec.clutter_density = a.clutter;
    spec.occlusion_prob = a.occlusion;
    spec.blur_prob = a.blur;
    spec.boundary_prob = a.boundary;

    const auto samples =
        generate_dataset<float>(spec, a.count, static_cast<std::uint64_t>(a.seed), threads);
    save_dataset(a.out, samples);
    const auto idx = split_indices(samples.size(), ratios,
                                   static_cast<std::uint64_t>(a.split_seed));
    write_split_lists(a.out, samples, idx);

    {
        std::ofstream os(fs::path(a.out) / "meta.txt");
        require(static_cast<bool>(os), "cannot write meta.txt under " + a.out);
        os << "image_size = " << a.image_size << "\n"
           << "channels = " << a.channels << "\n"
           << "num_classes = 2\n"
           << "count = " << a.count << "\n";
    }

    const DatasetStats stats = dataset_stats(samples, 2, a.image_size);
    const std::string table = stats.table();
    std::cout << table;
    {
        std::ofstream os(fs::path(a.out) / "stats.txt");
        os << table;
    }
    std::cout << "wrote " << samples.size() << " images to " << a.out << " (train/val/test = "
              << idx[0].size() << "/" << idx[1].size() << "/" << idx[2].size() << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string data, out, config;
    std::string model = "m6";
    int epochs = 300, batch = 16, image_size = 0, seed = 42, eval_every = 0;
    double lr = 0.01, momentum = 0.9, clip = 10.0, obj_pos_weight = 64.0;
    double lr_final_frac = 0.01, eval_conf = 0.25;
};

ModelConfig config_for(const std::string& preset, int image_size, int channels,
                       int num_classes) {
    const Preset p = presets().at(preset);
    ModelConfig cfg;
    cfg.image_size = image_size;
    cfg.in_channels = channels;
    cfg.num_classes = num_classes;
    cfg.use_aelan = p.aelan;
    cfg.use_mpda = p.mpda;
    cfg.use_rmpda = p.rmpda;
    return cfg;
}

int run_train(const TrainArgs& a) {
    namespace fs = std::filesystem;
    const auto meta = read_meta(a.data);
    const int image_size = a.image_size > 0 ? a.image_size : meta_int(meta, "image_size", 0);
    if (image_size <= 0)
        throw std::runtime_error("dataset '" + a.data +
                                 "' has no meta.txt; pass --image-size explicitly");
    const int channels = meta_int(meta, "channels", 1);
    const int num_classes = meta_int(meta, "num_classes", 2);

    KvList kv = {{"data", a.data},
                 {"out", a.out},
                 {"model", a.model},
                 {"epochs", std::to_string(a.epochs)},
                 {"batch", std::to_string(a.batch)},
                 {"lr", fmt("%.10g", a.lr)},
                 {"momentum", fmt("%.10g", a.momentum)},
                 {"clip", fmt("%.10g", a.clip)},
                 {"obj-pos-weight", fmt("%.10g", a.obj_pos_weight)},
                 {"lr-final-frac", fmt("%.10g", a.lr_final_frac)},
                 {"image-size", std::to_string(image_size)},
                 {"seed", std::to_string(a.seed)},
                 {"eval-every", std::to_string(a.eval_every)},
                 {"eval-conf", fmt("%.10g", a.eval_conf)}};
    echo_config(kv, a.out);

    auto train_set = load_split<float>(a.data, "train", num_classes);
    std::vector<Sample<float>> val_set;
    int eval_every = a.eval_every;
    if (eval_every > 0) {
        if (fs::exists(fs::path(a.data) / "splits" / "val.txt"))
            val_set = load_split<float>(a.data, "val", num_classes);
        if (val_set.empty()) {
            std::cout << "note: val split is empty, per-epoch eval disabled\n";
            eval_every = 0;
        }
    }
    std::cout << "loaded " << train_set.size() << " train / " << val_set.size()
              << " val samples\n";

    ModelConfig cfg = config_for(a.model, image_size, channels, num_classes);
    Rng rng(static_cast<std::uint64_t>(a.seed));
    auto model = Detector<float>::make(cfg, rng);
    std::cout << "model " << a.model << ": " << param_count(model.params()) << " parameters\n";

    TrainConfig tc;
    tc.batch_size = a.batch;
    tc.epochs = a.epochs;
    tc.lr = a.lr;
    tc.momentum = a.momentum;
    tc.clip_norm = a.clip;
    tc.lr_final_frac = a.lr_final_frac;
    tc.seed = static_cast<std::uint64_t>(a.seed);
    tc.eval_every = eval_every;
    tc.eval_conf = a.eval_conf;
    tc.loss.obj_pos_weight = a.obj_pos_weight;

    std::ofstream jsonl(fs::path(a.out) / "train_log.jsonl");
    require(static_cast<bool>(jsonl), "cannot write train_log.jsonl under " + a.out);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult res = train(model, train_set, val_set, tc, &jsonl);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto recs = to_records(model.params(), model.meta());
    const std::string wpath = (fs::path(a.out) / "weights.bdrn").string();
    save_weights(wpath, recs);

    const LossBreakdown first = res.epochs.front().loss;
    const LossBreakdown last = res.epochs.back().loss;
    std::cout << fmt("trained %g", static_cast<double>(res.epochs.size()))
              << " epochs in " << fmt("%.1f", secs) << "s\n"
              << "loss: first total=" << fmt("%.6g", first.total)
              << " last total=" << fmt("%.6g", last.total);
    if (last.total > 0) std::cout << " (ratio " << fmt("%.2f", first.total / last.total) << "x)";
    std::cout << "\n";
    for (auto it = res.epochs.rbegin(); it != res.epochs.rend(); ++it)
        if (it->has_val) {
            std::cout << "val mAP@0.5 " << fmt("%.4f", it->val.map50) << " at epoch "
                      << it->epoch << "\n";
            break;
        }
    std::cout << "weights written to " << wpath << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string data, weights, out, predictions, config;
    std::string split = "val";
    double conf = 0.25, nms = 0.45, decode_conf = 0.001;
    bool no_timing = false;
    int threads = 0;
};

// Prediction files bypass the model: one detection per line,
// "id class cx cy w h conf", ids matching the evaluated split.
std::vector<std::vector<Detection>> read_predictions(
    const std::string& path, const std::vector<Sample<float>>& samples, int num_classes) {
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < samples.size(); ++k) index[samples[k].id] = k;
    std::vector<std::vector<Detection>> dets(samples.size());
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open predictions file '" + path + "'");
    std::string line;
    int ln = 0;
    while (std::getline(is, line)) {
        ++ln;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::istringstream ss(t);
        std::string id;
        Detection d;
        double cx, cy, w, h;
        if (!(ss >> id >> d.box.class_id >> cx >> cy >> w >> h >> d.confidence))
            throw std::runtime_error(path + ":" + std::to_string(ln) +
                                     ": expected 'id class cx cy w h conf'");
        std::string extra;
        if (ss >> extra)
            throw std::runtime_error(path + ":" + std::to_string(ln) + ": trailing token '" +
                                     extra + "'");
        const auto it = index.find(id);
        if (it == index.end())
            throw std::runtime_error(path + ":" + std::to_string(ln) +
                                     ": unknown image id '" + id + "'");
        if (d.box.class_id < 0 || d.box.class_id >= num_classes)
            throw std::runtime_error(path + ":" + std::to_string(ln) + ": class " +
                                     std::to_string(d.box.class_id) + " out of range");
        if (d.confidence < 0.0 || d.confidence > 1.0)
            throw std::runtime_error(path + ":" + std::to_string(ln) +
                                     ": confidence out of [0,1]");
        d.box.cx = cx;
        d.box.cy = cy;
        d.box.w = w;
        d.box.h = h;
        dets[it->second].push_back(d);
    }
    return dets;
}

json report_to_json(const MetricsReport& rep, int num_classes) {
    json j;
    j["images"] = rep.images;
    j["total_gt"] = rep.total_gt;
    j["total_dets"] = rep.total_dets;
    j["conf_threshold"] = rep.conf_threshold;
    j["precision"] = rep.precision;
    j["recall"] = rep.recall;
    j["best_f1"] = {{"f1", rep.best_f1},
                    {"precision", rep.best_f1_precision},
                    {"recall", rep.best_f1_recall},
                    {"conf", rep.best_f1_conf}};
    j["map50"] = rep.map50;
    j["map50_95"] = rep.map50_95;
    j["accuracy_pct"] = rep.accuracy.accuracy_pct;
    j["fn_pct"] = rep.accuracy.fn_pct;
    j["fp_pct"] = rep.accuracy.fp_pct;
    json per_class;
    for (int c = 0; c < num_classes; ++c)
        per_class[class_name(c, num_classes)] =
            c < static_cast<int>(rep.per_class_ap50.size()) ? rep.per_class_ap50[c] : -1.0;
    j["per_class_ap50"] = per_class;
    json per_bin;
    for (int b = 0; b < 4; ++b)
        per_bin[size_bin_name(static_cast<SizeBin>(b))] = rep.per_bin_ap50[b];
    j["per_bin_ap50"] = per_bin;
    j["ait_frame_s"] = rep.ait_frame_s;
    return j;
}

void print_report(const MetricsReport& rep, int num_classes) {
    auto row = [](const std::string& k, const std::string& v) {
        std::printf("  %-22s %s\n", k.c_str(), v.c_str());
    };
    std::printf("evaluation over %zu images (%zu ground truths, %zu detections)\n", rep.images,
                rep.total_gt, rep.total_dets);
    row("precision", fmt("%.4f", rep.precision) + "  (conf >= " + fmt("%.3g", rep.conf_threshold) + ")");
    row("recall", fmt("%.4f", rep.recall));
    row("best F1", fmt("%.4f", rep.best_f1) + "  (P=" + fmt("%.4f", rep.best_f1_precision) +
                       " R=" + fmt("%.4f", rep.best_f1_recall) +
                       " conf=" + fmt("%.3f", rep.best_f1_conf) + ")");
    row("mAP@0.5", fmt("%.4f", rep.map50));
    row("mAP@0.5:0.95", fmt("%.4f", rep.map50_95));
    row("accuracy", fmt("%.2f", rep.accuracy.accuracy_pct) + "%  (FN " +
                        fmt("%.2f", rep.accuracy.fn_pct) + "%, FP " +
                        fmt("%.2f", rep.accuracy.fp_pct) + "%)");
    for (int c = 0; c < num_classes && c < static_cast<int>(rep.per_class_ap50.size()); ++c) {
        const double ap = rep.per_class_ap50[c];
        row("AP@0.5 " + class_name(c, num_classes), ap < 0 ? "n/a" : fmt("%.4f", ap));
    }
    for (int b = 0; b < 4; ++b) {
        const double ap = rep.per_bin_ap50[b];
        row(std::string("AP@0.5 ") + size_bin_name(static_cast<SizeBin>(b)),
            ap < 0 ? "n/a" : fmt("%.4f", ap));
    }
    if (rep.ait_frame_s > 0)
        row("avg inference", fmt("%.2f", rep.ait_frame_s * 1000.0) + " ms/frame");
}

int run_eval(const EvalArgs& a) {
    namespace fs = std::filesystem;
    const auto meta = read_meta(a.data);
    const int num_classes = meta_int(meta, "num_classes", 2);
    auto samples = load_split<float>(a.data, a.split, num_classes);
    if (samples.empty())
        throw std::runtime_error("split '" + a.split + "' of '" + a.data + "' is empty");
    const Shape s0 = samples[0].image.shape();
    require(s0.h == s0.w, "non-square images in dataset");
    const int threads = resolve_threads(a.threads);

    KvList kv = {{"data", a.data},
                 {"split", a.split},
                 {"weights", a.weights},
                 {"predictions", a.predictions},
                 {"conf", fmt("%.10g", a.conf)},
                 {"nms", fmt("%.10g", a.nms)},
                 {"decode-conf", fmt("%.10g", a.decode_conf)},
                 {"no-timing", a.no_timing ? "true" : "false"},
                 {"threads", std::to_string(threads)},
                 {"out", a.out}};
    std::string echo_dir;
    if (!a.out.empty()) {
        const auto parent = fs::path(a.out).parent_path();
        echo_dir = parent.empty() ? "." : parent.string();
    }
    echo_config(kv, echo_dir);

    MetricsReport rep;
    if (!a.predictions.empty()) {
        const auto dets = read_predictions(a.predictions, samples, num_classes);
        std::vector<std::vector<BoundingBox>> gts(samples.size());
        for (std::size_t k = 0; k < samples.size(); ++k) gts[k] = samples[k].labels;
        rep = evaluate_detections(dets, gts, num_classes, s0.h, a.conf);
    } else {
        if (a.weights.empty())
            throw UsageError("eval needs --weights or --predictions");
        const auto recs = load_weights(a.weights);
        const ModelConfig cfg = model_config_from_meta(meta_of(recs));
        if (cfg.image_size != s0.h || cfg.in_channels != s0.c)
            throw std::runtime_error(
                "weights expect " + std::to_string(cfg.in_channels) + "x" +
                std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) +
                " input but dataset images are " + std::to_string(s0.c) + "x" +
                std::to_string(s0.h) + "x" + std::to_string(s0.w));
        Rng rng(0);
        auto model = Detector<float>::make(cfg, rng);
        auto params = model.params();
        apply_records(params, recs);
        rep = evaluate_model(model, samples, a.conf, a.decode_conf, a.nms, !a.no_timing,
                             threads);
    }

    print_report(rep, num_classes);
    if (!a.out.empty()) {
        if (!echo_dir.empty()) fs::create_directories(echo_dir);
        std::ofstream os(a.out);
        require(static_cast<bool>(os), "cannot write report to " + a.out);
        os << report_to_json(rep, num_classes).dump(2) << "\n";
        std::cout << "report written to " << a.out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
    std::string weights, image, out, config;
    double conf = 0.25, nms = 0.45;
};

// 3x5 digit glyphs, bit 2 of each row byte is the left column.
const unsigned char kFont[10][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111}, {0b010, 0b110, 0b010, 0b010, 0b111},
    {0b111, 0b001, 0b111, 0b100, 0b111}, {0b111, 0b001, 0b111, 0b001, 0b111},
    {0b101, 0b101, 0b111, 0b001, 0b001}, {0b111, 0b100, 0b111, 0b001, 0b111},
    {0b111, 0b100, 0b111, 0b101, 0b111}, {0b111, 0b001, 0b010, 0b010, 0b010},
    {0b111, 0b101, 0b111, 0b101, 0b111}, {0b111, 0b101, 0b111, 0b001, 0b111},
};

struct Canvas {
    int w = 0, h = 0;
    std::vector<unsigned char> rgb;

    void put(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        if (x < 0 || x >= w || y < 0 || y >= h) return;
        const std::size_t k = 3 * (static_cast<std::size_t>(y) * w + x);
        rgb[k] = r;
        rgb[k + 1] = g;
        rgb[k + 2] = b;
    }

    void rect(int x0, int y0, int x1, int y1, unsigned char r, unsigned char g,
              unsigned char b) {
        for (int x = x0; x <= x1; ++x) {
            put(x, y0, r, g, b);
            put(x, y1, r, g, b);
        }
        for (int y = y0; y <= y1; ++y) {
            put(x0, y, r, g, b);
            put(x1, y, r, g, b);
        }
    }

    void text(int x, int y, const std::string& digits, unsigned char r, unsigned char g,
              unsigned char b) {
        for (char c : digits) {
            if (c < '0' || c > '9') continue;
            const unsigned char* rows = kFont[c - '0'];
            for (int ry = 0; ry < 5; ++ry)
                for (int rx = 0; rx < 3; ++rx)
                    if ((rows[ry] >> (2 - rx)) & 1) put(x + rx, y + ry, r, g, b);
            x += 4;
        }
    }
};

int run_infer(const InferArgs& a) {
    const auto recs = load_weights(a.weights);
    const ModelConfig cfg = model_config_from_meta(meta_of(recs));
    Rng rng(0);
    auto model = Detector<float>::make(cfg, rng);
    auto params = model.params();
    apply_records(params, recs);

    const Tensor<float> img = read_ppm<float>(a.image);
    const Shape s = img.shape();
    if (s.h != cfg.image_size || s.w != cfg.image_size || s.c != cfg.in_channels)
        throw std::runtime_error("weights expect " + std::to_string(cfg.in_channels) + "x" +
                                 std::to_string(cfg.image_size) + "x" +
                                 std::to_string(cfg.image_size) + " input but '" + a.image +
                                 "' is " + std::to_string(s.c) + "x" + std::to_string(s.h) +
                                 "x" + std::to_string(s.w));

    std::vector<Detection> dets;
    {
        NoGradGuard ng;
        dets = nms(decode(model.forward(img), model.cfg, a.conf, 0), a.nms);
    }
    std::cout << dets.size() << " detection(s)\n";
    for (const auto& d : dets)
        std::cout << "  class=" << class_name(d.box.class_id, cfg.num_classes)
                  << " conf=" << fmt("%.3f", d.confidence) << " cx=" << fmt("%.4f", d.box.cx)
                  << " cy=" << fmt("%.4f", d.box.cy) << " w=" << fmt("%.4f", d.box.w)
                  << " h=" << fmt("%.4f", d.box.h) << "\n";

    if (dets.empty()) {
        // Nothing to draw: the output is the input, byte for byte.
        std::ifstream is(a.image, std::ios::binary);
        require(static_cast<bool>(is), "cannot reopen " + a.image);
        std::stringstream buf;
        buf << is.rdbuf();
        std::ofstream os(a.out, std::ios::binary);
        require(static_cast<bool>(os), "cannot write " + a.out);
        os << buf.str();
        std::cout << "no detections, wrote unmodified image to " << a.out << "\n";
        return 0;
    }

    Canvas cv;
    cv.w = s.w;
    cv.h = s.h;
    cv.rgb.resize(static_cast<std::size_t>(3) * s.w * s.h);
    const float* px = img.data();
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int src = s.c == 3 ? c : 0;
                const float v = px[(static_cast<std::size_t>(src) * s.h + y) * s.w + x];
                cv.rgb[3 * (static_cast<std::size_t>(y) * s.w + x) + c] = static_cast<unsigned char>(
                    std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            }

    for (const auto& d : dets) {
        const unsigned char r = d.box.class_id == 0 ? 255 : 0;
        const unsigned char b = d.box.class_id == 0 ? 0 : 255;
        const int x0 = std::clamp(static_cast<int>(std::lround((d.box.cx - d.box.w / 2) * s.w)), 0, s.w - 1);
        const int x1 = std::clamp(static_cast<int>(std::lround((d.box.cx + d.box.w / 2) * s.w)), 0, s.w - 1);
        const int y0 = std::clamp(static_cast<int>(std::lround((d.box.cy - d.box.h / 2) * s.h)), 0, s.h - 1);
        const int y1 = std::clamp(static_cast<int>(std::lround((d.box.cy + d.box.h / 2) * s.h)), 0, s.h - 1);
        cv.rect(x0, y0, x1, y1, r, 0, b);
        const int pct = static_cast<int>(std::lround(std::clamp(d.confidence, 0.0, 1.0) * 100));
        cv.text(x0, y0 >= 7 ? y0 - 7 : y1 + 2, std::to_string(pct), r, 0, b);
    }

    std::ofstream os(a.out, std::ios::binary);
    require(static_cast<bool>(os), "cannot write " + a.out);
    os << "P6\n" << s.w << " " << s.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(cv.rgb.data()),
             static_cast<std::streamsize>(cv.rgb.size()));
    std::cout << "annotated image written to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradArgs {
    std::string module = "all";
    int seed = 3;
    bool corrupt = false;
};

bool report_check(const std::string& mod, const std::string& what, const GradCheckResult& r,
                  double tol) {
    const bool ok = r.ok(tol);
    std::printf("[%-5s] %-14s max_err=%.3e  tol=%.0e  (%zu coords)  %s\n", mod.c_str(),
                what.c_str(), r.max_err, tol, r.checked, ok ? "PASS" : "FAIL");
    return ok;
}

bool check_dconv(int seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    auto layer = DeformConv2d<double>::make(2, 3, 3, 1, 1, rng);
    // Non-trivial offsets so the bilinear path is actually exercised.
    layer.offb.w = tensor_uniform<double>(layer.offb.w.shape(), rng, -0.15, 0.15);
    layer.offb.w.set_requires_grad(true);
    layer.offb.b = tensor_uniform<double>(layer.offb.b.shape(), rng, -0.4, 0.4);
    layer.offb.b.set_requires_grad(true);
    Tensor<double> x = tensor_uniform<double>(Shape{1, 2, 6, 6}, rng, -1.0, 1.0);
    auto from_input = [&](Tensor<double>& t) { return sum(square(silu(layer.forward(t)))); };
    auto from_param = [&](Tensor<double>&) { return sum(square(silu(layer.forward(x)))); };
    bool ok = report_check("dconv", "input", gradcheck(x, from_input), 1e-5);
    ok &= report_check("dconv", "kernel", gradcheck(layer.main.w, from_param), 1e-5);
    ok &= report_check("dconv", "offset.w", gradcheck(layer.offb.w, from_param, 1e-5, 80), 1e-5);
    ok &= report_check("dconv", "offset.b", gradcheck(layer.offb.b, from_param), 1e-5);
    return ok;
}

bool check_attention(const std::string& mod, bool reversed, int seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    DualAttentionConfig dc;
    dc.channels = 8;
    dc.spatial_kernel = 7;
    dc.reversed = reversed;
    auto block = DualAttention<double>::make(dc, rng);
    Tensor<double> x = tensor_uniform<double>(Shape{1, 8, 12, 12}, rng, -1.0, 1.0);
    auto from_input = [&](Tensor<double>& t) { return sum(square(block.forward(t))); };
    auto from_param = [&](Tensor<double>&) { return sum(square(block.forward(x))); };
    bool ok = report_check(mod, "input", gradcheck(x, from_input, 1e-5, 160), 1e-5);
    ok &= report_check(mod, "proj.w", gradcheck(block.proj.w, from_param, 1e-5, 64), 1e-5);
    ok &= report_check(mod, "split.f3a.w", gradcheck(block.split.f3a.w, from_param, 1e-5, 64),
                       1e-5);
    return ok;
}

bool check_aelan(int seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    AelanConfig ac;
    ac.in = 8;
    ac.out = 8;
    ac.csp_depth = 2;
    ac.use_deformable = true;
    auto block = GelanBlock<double>::make(ac, rng);
    Tensor<double> x = tensor_uniform<double>(Shape{1, 8, 8, 8}, rng, -1.0, 1.0);
    auto from_input = [&](Tensor<double>& t) { return sum(square(block.forward(t))); };
    auto from_param = [&](Tensor<double>&) { return sum(square(block.forward(x))); };
    bool ok = report_check("aelan", "input", gradcheck(x, from_input, 1e-5, 160), 1e-5);
    ok &= report_check("aelan", "transition.w",
                       gradcheck(block.transition.w, from_param, 1e-5, 96), 1e-5);
    ok &= report_check("aelan", "csp0.c1.w",
                       gradcheck(block.subs[0].c1.dc.main.w, from_param, 1e-5, 96), 1e-5);
    return ok;
}

bool check_loss(int seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.in_channels = 1;
    cfg.num_classes = 2;
    std::array<Tensor<double>, 3> raw = {
        tensor_uniform<double>(Shape{1, 7, 4, 4}, rng, -2.0, 2.0),
        tensor_uniform<double>(Shape{1, 7, 2, 2}, rng, -2.0, 2.0),
        tensor_uniform<double>(Shape{1, 7, 1, 1}, rng, -2.0, 2.0)};
    for (auto& r : raw) r.set_requires_grad(true);
    std::vector<std::vector<BoundingBox>> gt = {
        {{0, 0.30, 0.30, 0.25, 0.25}, {1, 0.62, 0.55, 0.50, 0.50}}};
    const auto assigns = assign_targets(gt, cfg);
    LossConfig lc;
    bool ok = true;
    for (int li = 0; li < 3; ++li) {
        auto fn = [&](Tensor<double>&) {
            return silu(compute_loss(raw, assigns, cfg, lc).total);
        };
        ok &= report_check("loss", "level" + std::to_string(li), gradcheck(raw[li], fn, 1e-6),
                           1e-4);
    }
    return ok;
}

bool check_full(int seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    ModelConfig cfg;
    cfg.image_size = 96;
    cfg.in_channels = 1;
    cfg.num_classes = 2;
    cfg.stem_ch = 4;
    cfg.p3_ch = 8;
    cfg.p4_ch = 8;
    cfg.p5_ch = 8;
    cfg.csp_depth = 1;
    cfg.sa_kernel = 3;
    cfg.use_aelan = true;
    cfg.use_mpda = true;
    cfg.use_rmpda = true;
    auto model = Detector<double>::make(cfg, rng);
    Tensor<double> x = tensor_uniform<double>(Shape{1, 1, 96, 96}, rng, 0.0, 1.0);
    std::vector<std::vector<BoundingBox>> gt = {
        {{0, 0.40, 0.40, 0.20, 0.20}, {1, 0.70, 0.60, 0.11, 0.09}}};
    const auto assigns = assign_targets(gt, cfg);
    LossConfig lc;
    auto fn = [&](Tensor<double>&) {
        return compute_loss(model.forward(x), assigns, cfg, lc).total;
    };
    auto params = model.params();
    auto find = [&](const std::string& needle) -> Tensor<double>& {
        for (auto& [name, t] : params)
            if (name.find(needle) != std::string::npos) return t;
        throw std::runtime_error("no parameter matching '" + needle + "'");
    };
    bool ok = report_check("full", "stem.w", gradcheck(find("backbone"), fn, 1e-5, 20), 1e-3);
    ok &= report_check("full", "mpda", gradcheck(find("mpda"), fn, 1e-5, 20), 1e-3);
    ok &= report_check("full", "head.w", gradcheck(find("head.p3.b"), fn, 1e-5, 20), 1e-3);
    return ok;
}

int run_gradcheck(const GradArgs& a) {
    if (a.corrupt) {
        detail::corrupt_backward_flag() = true;
        std::cout << "note: backward pass deliberately corrupted\n";
    }
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    const bool all = a.module == "all";
    if (all || a.module == "dconv") ok &= check_dconv(a.seed);
    if (all || a.module == "mpda") ok &= check_attention("mpda", false, a.seed);
    if (all || a.module == "rmpda") ok &= check_attention("rmpda", true, a.seed);
    if (all || a.module == "aelan") ok &= check_aelan(a.seed);
    if (all || a.module == "loss") ok &= check_loss(a.seed);
    if (all) ok &= check_full(a.seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "gradcheck finished in " << fmt("%.1f", secs) << "s: "
              << (ok ? "all checks passed" : "FAILURES above") << "\n";
    if (!ok) throw VerifyFailure("gradient check failed");
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

struct AblArgs {
    std::string data, out, config;
    int epochs = 100, seed = 42, batch = 16, threads = 0;
    double lr = 0.01, obj_pos_weight = 64.0, eval_conf = 0.25;
};

struct AblRow {
    std::string model;
    bool ok = false;
    std::string error;
    MetricsReport rep;
    std::size_t params = 0;
    double train_s = 0;
};

int run_ablate(const AblArgs& a) {
    namespace fs = std::filesystem;
    const auto meta = read_meta(a.data);
    const int image_size = meta_int(meta, "image_size", 0);
    if (image_size <= 0)
        throw std::runtime_error("dataset '" + a.data + "' has no meta.txt");
    const int channels = meta_int(meta, "channels", 1);
    const int num_classes = meta_int(meta, "num_classes", 2);
    const int threads = resolve_threads(a.threads);

    KvList kv = {{"data", a.data},
                 {"out", a.out},
                 {"epochs", std::to_string(a.epochs)},
                 {"batch", std::to_string(a.batch)},
                 {"lr", fmt("%.10g", a.lr)},
                 {"obj-pos-weight", fmt("%.10g", a.obj_pos_weight)},
                 {"eval-conf", fmt("%.10g", a.eval_conf)},
                 {"seed", std::to_string(a.seed)},
                 {"threads", std::to_string(threads)}};
    echo_config(kv, a.out);

    const auto train_set = load_split<float>(a.data, "train", num_classes);
    std::vector<Sample<float>> eval_set;
    if (fs::exists(fs::path(a.data) / "splits" / "val.txt"))
        eval_set = load_split<float>(a.data, "val", num_classes);
    std::string eval_split = "val";
    if (eval_set.empty()) {
        std::cout << "note: val split is empty, evaluating on the train split\n";
        eval_set = train_set;
        eval_split = "train";
    }
    std::cout << "loaded " << train_set.size() << " train samples, evaluating on "
              << eval_set.size() << " " << eval_split << " samples\n";

    std::vector<AblRow> rows;
    for (const std::string& name : preset_names()) {
        AblRow row;
        row.model = name;
        std::cout << "--- " << name << " ---\n";
        try {
            ModelConfig cfg = config_for(name, image_size, channels, num_classes);
            Rng rng(static_cast<std::uint64_t>(a.seed));
            auto model = Detector<float>::make(cfg, rng);
            row.params = param_count(model.params());

            TrainConfig tc;
            tc.batch_size = a.batch;
            tc.epochs = a.epochs;
            tc.lr = a.lr;
            tc.seed = static_cast<std::uint64_t>(a.seed);
            tc.eval_every = 0;
            tc.loss.obj_pos_weight = a.obj_pos_weight;

            const auto mdir = fs::path(a.out) / name;
            fs::create_directories(mdir);
            std::ofstream jsonl(mdir / "train_log.jsonl");
            const auto t0 = std::chrono::steady_clock::now();
            train(model, train_set, {}, tc, &jsonl);
            row.train_s =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            save_weights((mdir / "weights.bdrn").string(),
                         to_records(model.params(), model.meta()));

            row.rep = evaluate_model(model, eval_set, a.eval_conf, 0.001, 0.45, true, threads);
            {
                std::ofstream os(mdir / "report.json");
                os << report_to_json(row.rep, num_classes).dump(2) << "\n";
            }
            row.ok = true;
            std::cout << name << ": mAP@0.5 " << fmt("%.4f", row.rep.map50) << " in "
                      << fmt("%.1f", row.train_s) << "s\n";
        } catch (const std::exception& e) {
            row.error = e.what();
            std::cout << name << ": error: " << row.error << "\n";
        }
        rows.push_back(std::move(row));
    }

    std::string table;
    {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-6s %8s %8s %9s %13s %7s %7s %7s %9s %9s %8s\n",
                      "model", "P", "R", "mAP@0.5", "mAP@0.5:0.95", "acc%", "FN%", "FP%",
                      "params", "train_s", "ait_ms");
        table += buf;
        for (const auto& r : rows) {
            if (!r.ok) {
                std::snprintf(buf, sizeof buf, "%-6s error: %s\n", r.model.c_str(),
                              r.error.c_str());
                table += buf;
                continue;
            }
            std::snprintf(buf, sizeof buf,
                          "%-6s %8.4f %8.4f %9.4f %13.4f %7.2f %7.2f %7.2f %9zu %9.1f %8.1f\n",
                          r.model.c_str(), r.rep.precision, r.rep.recall, r.rep.map50,
                          r.rep.map50_95, r.rep.accuracy.accuracy_pct, r.rep.accuracy.fn_pct,
                          r.rep.accuracy.fp_pct, r.params, r.train_s,
                          r.rep.ait_frame_s * 1000.0);
            table += buf;
        }
    }
    const AblRow* m1 = nullptr;
    const AblRow* m6 = nullptr;
    for (const auto& r : rows) {
        if (r.model == "m1" && r.ok) m1 = &r;
        if (r.model == "m6" && r.ok) m6 = &r;
    }
    if (m1 && m6)
        table += "m6 - m1: mAP@0.5 " + fmt("%+.4f", m6->rep.map50 - m1->rep.map50) +
                 ", mAP@0.5:0.95 " + fmt("%+.4f", m6->rep.map50_95 - m1->rep.map50_95) + "\n";
    std::cout << table;
    {
        std::ofstream os(fs::path(a.out) / "ablation.txt");
        os << table;
    }
    {
        json arr = json::array();
        for (const auto& r : rows) {
            json j;
            j["model"] = r.model;
            if (r.ok) {
                j["params"] = r.params;
                j["train_s"] = r.train_s;
                json rep = report_to_json(r.rep, num_classes);
                for (auto it = rep.begin(); it != rep.end(); ++it) j[it.key()] = it.value();
            } else {
                j["error"] = r.error;
            }
            arr.push_back(j);
        }
        std::ofstream os(fs::path(a.out) / "ablation.json");
        os << arr.dump(2) << "\n";
    }
    for (const auto& r : rows)
        if (!r.ok)
            throw std::runtime_error("ablation row " + r.model + " failed: " + r.error);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "birdrone: small flying object detection on synthetic scenes\n"
        "exit codes: 0 ok, 1 usage, 2 runtime failure, 3 verification failure"};
    app.require_subcommand(1);

    GenArgs ga;
    auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
    gen->add_option("--out", ga.out, "output dataset directory")->required();
    gen->add_option("--config", ga.config, "key=value config file (flags override)");
    gen->add_option("--count", ga.count, "number of images")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", ga.seed, "base RNG seed");
    gen->add_option("--image-size", ga.image_size, "square image side in pixels");
    gen->add_option("--channels", ga.channels, "1 grayscale or 3 RGB")
        ->check(CLI::IsMember({1, 3}));
    gen->add_option("--min-objects", ga.min_objects, "minimum objects per image");
    gen->add_option("--max-objects", ga.max_objects, "maximum objects per image");
    gen->add_option("--drone-prob", ga.drone_prob, "probability an object is a drone");
    gen->add_option("--scale-min", ga.scale_min, "smallest object size in pixels");
    gen->add_option("--scale-max", ga.scale_max, "largest object size in pixels");
    gen->add_option("--small-bias", ga.small_bias,
                    "0..1, skews sizes small; 1 keeps every object under 32px");
    gen->add_option("--clutter", ga.clutter, "background clutter density 0..1");
    gen->add_option("--occlusion", ga.occlusion, "per-object occlusion probability");
    gen->add_option("--blur", ga.blur, "per-object motion blur probability");
    gen->add_option("--boundary", ga.boundary, "per-object boundary placement probability");
    gen->add_option("--split", ga.split, "train,val,test ratios (default 0.7,0.2,0.1)");
    gen->add_option("--split-seed", ga.split_seed, "shuffle seed for the split");
    gen->add_option("--threads", ga.threads, "worker threads (0 = BDRN_THREADS or 1)");
    gen->add_flag("--force", ga.force, "write into a non-empty directory");

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train a detector");
    tr->add_option("--data", ta.data, "dataset directory from generate")->required();
    tr->add_option("--out", ta.out, "output run directory")->required();
    tr->add_option("--config", ta.config, "key=value config file (flags override)");
    tr->add_option("--model", ta.model, "variant m1..m6 (m6 = all modules)")
        ->check(CLI::IsMember(preset_names()));
    tr->add_option("--epochs", ta.epochs, "training epochs")->check(CLI::PositiveNumber);
    tr->add_option("--batch", ta.batch, "batch size")->check(CLI::PositiveNumber);
    tr->add_option("--lr", ta.lr, "initial learning rate");
    tr->add_option("--momentum", ta.momentum, "SGD momentum");
    tr->add_option("--clip", ta.clip, "global gradient norm clip");
    tr->add_option("--obj-pos-weight", ta.obj_pos_weight, "positive weight in the obj BCE");
    tr->add_option("--lr-final-frac", ta.lr_final_frac, "cosine schedule floor fraction");
    tr->add_option("--image-size", ta.image_size, "override dataset image size");
    tr->add_option("--seed", ta.seed, "init and shuffle seed");
    tr->add_option("--eval-every", ta.eval_every, "val eval period in epochs (0 = off)");
    tr->add_option("--eval-conf", ta.eval_conf, "confidence threshold for val eval");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "evaluate weights or a predictions file");
    ev->add_option("--data", ea.data, "dataset directory")->required();
    ev->add_option("--config", ea.config, "key=value config file (flags override)");
    ev->add_option("--weights", ea.weights, "weights file from train");
    ev->add_option("--predictions", ea.predictions,
                   "detections file 'id class cx cy w h conf' (bypasses the model)");
    ev->add_option("--split", ea.split, "dataset split")
        ->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--conf", ea.conf, "confidence threshold for P/R/accuracy");
    ev->add_option("--nms", ea.nms, "NMS IoU threshold");
    ev->add_option("--decode-conf", ea.decode_conf, "decoder confidence floor");
    ev->add_option("--out", ea.out, "write a JSON report here");
    ev->add_option("--threads", ea.threads, "worker threads (0 = BDRN_THREADS or 1)");
    ev->add_flag("--no-timing", ea.no_timing, "skip timing for reproducible reports");

    InferArgs ia;
    auto* inf = app.add_subcommand("infer", "run on one image and draw detections");
    inf->add_option("--weights", ia.weights, "weights file from train")->required();
    inf->add_option("--image", ia.image, "input PPM/PGM image")->required();
    inf->add_option("--out", ia.out, "annotated output image")->required();
    inf->add_option("--config", ia.config, "key=value config file (flags override)");
    inf->add_option("--conf", ia.conf, "confidence threshold");
    inf->add_option("--nms", ia.nms, "NMS IoU threshold");

    GradArgs ra;
    auto* gc = app.add_subcommand("gradcheck", "compare backward passes to finite differences");
    gc->add_option("--module", ra.module, "which module to check")
        ->check(CLI::IsMember({"dconv", "mpda", "rmpda", "aelan", "loss", "all"}));
    gc->add_option("--seed", ra.seed, "RNG seed for inputs and weights");
    gc->add_flag("--corrupt", ra.corrupt,
                 "deliberately corrupt one backward rule (the checks must then fail)");

    AblArgs aa;
    auto* ab = app.add_subcommand("ablate", "train and score every variant m1..m6");
    ab->add_option("--data", aa.data, "dataset directory")->required();
    ab->add_option("--out", aa.out, "output directory for the table and runs")->required();
    ab->add_option("--config", aa.config, "key=value config file (flags override)");
    ab->add_option("--epochs", aa.epochs, "epochs per variant")->check(CLI::PositiveNumber);
    ab->add_option("--batch", aa.batch, "batch size");
    ab->add_option("--lr", aa.lr, "initial learning rate");
    ab->add_option("--obj-pos-weight", aa.obj_pos_weight, "positive weight in the obj BCE");
    ab->add_option("--eval-conf", aa.eval_conf, "confidence threshold for the table");
    ab->add_option("--seed", aa.seed, "shared init and shuffle seed");
    ab->add_option("--threads", aa.threads, "eval worker threads (0 = BDRN_THREADS or 1)");

    try {
        const auto args = effective_args(argc, argv);
        std::vector<const char*> cargv{argv[0]};
        for (const auto& s : args) cargv.push_back(s.c_str());
        app.parse(static_cast<int>(cargv.size()), cargv.data());

        if (gen->parsed()) return run_generate(ga);
        if (tr->parsed()) return run_train(ta);
        if (ev->parsed()) return run_eval(ea);
        if (inf->parsed()) return run_infer(ia);
        if (gc->parsed()) return run_gradcheck(ra);
        if (ab->parsed()) return run_ablate(aa);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const VerifyFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
