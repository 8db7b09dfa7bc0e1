// Command-line front end: dataset generation, training, evaluation,
// prediction dumps, gradient checks and inspection.
//
// Exit codes: 0 success, 1 usage or validation error, 2 numerical failure.

#include "locdep/locdep.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace locdep;

namespace {

constexpr int kUsageError = 1;
constexpr int kNumericalError = 2;

struct NumericalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
        json j = json::parse(in);
        if (!j.is_object()) throw ConfigError(path + ": top level must be an object");
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Flag text to JSON: numbers and booleans keep their type, anything else
/// becomes a string.
json scalar_from_text(const std::string& text) {
    try {
        json v = json::parse(text);
        if (v.is_number() || v.is_boolean()) return v;
    } catch (const json::parse_error&) {
    }
    return text;
}

std::string flag_name(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return "--" + key;
}

/// One flag per config field. Values are kept as text and merged into the
/// section after parsing, so flags override the file.
struct FieldFlags {
    std::map<std::string, std::string> values; // key -> text
    std::map<std::string, CLI::Option*> options;

    /// `notes` replaces the "default ..." text for fields whose default is
    /// not a constant.
    void add(CLI::App* app, const json& defaults, const std::string& group, const std::set<std::string>& skip = {},
             const std::map<std::string, std::string>& notes = {}) {
        for (const auto& [key, value] : defaults.items()) {
            if (skip.count(key) || options.count(key)) continue;
            const auto note = notes.find(key);
            const std::string desc = note != notes.end() ? note->second : "default " + value.dump();
            options[key] = app->add_option(flag_name(key), values[key], desc)->group(group)->type_name("VALUE");
        }
    }

    bool given(const std::string& key) const {
        const auto it = options.find(key);
        return it != options.end() && it->second->count() > 0;
    }

    /// Copies given flags whose key belongs to `reference` into `section`.
    /// Returns the given flags that belong nowhere in `reference`.
    std::vector<std::string> merge(json& section, const json& reference) const {
        std::vector<std::string> unused;
        for (const auto& [key, opt] : options) {
            if (opt->count() == 0) continue;
            if (reference.contains(key)) section[key] = scalar_from_text(values.at(key));
            else unused.push_back(key);
        }
        return unused;
    }
};

json section_of(const json& file, const std::string& key) {
    if (!file.contains(key)) return json::object();
    if (!file.at(key).is_object()) throw ConfigError("config: '" + key + "' must be an object");
    return file.at(key);
}

std::string string_setting(const json& file, const std::string& key, const CLI::Option* flag, const std::string& flag_value,
                           const std::string& fallback = "") {
    if (flag->count() > 0) return flag_value;
    if (file.contains(key)) return file.at(key).get<std::string>();
    return fallback;
}

void echo(const json& resolved) {
    std::cout << "resolved config:\n" << resolved.dump(2) << '\n';
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

std::string two_digits(std::int64_t v) {
    std::ostringstream s;
    s << std::setw(2) << std::setfill('0') << v;
    return s.str();
}

template <typename F>
decltype(auto) with_model(const AnyModel& model, F&& f) {
    return std::visit(std::forward<F>(f), model);
}

RolloutSchedule resolve_schedule(const std::string& model, std::optional<std::int64_t> given,
                                 std::optional<std::int64_t> closed) {
    RolloutSchedule s = default_schedule(model);
    if (given) s.given_frames = *given;
    if (closed) s.closed_loop_frames = *closed;
    return s;
}

json schedule_json(const RolloutSchedule& s) {
    return {{"given_frames", s.given_frames}, {"closed_loop_frames", s.closed_loop_frames}};
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string config, dataset, out, mnist_dir;
    std::uint64_t seed = 1;
    FieldFlags fields;
    CLI::Option *dataset_opt = nullptr, *out_opt = nullptr, *mnist_opt = nullptr, *seed_opt = nullptr;
};

void setup_gen_data(CLI::App& app, GenDataArgs& a) {
    auto* cmd = app.add_subcommand("gen-data", "Generate an occluded sequence dataset");
    cmd->add_option("--config", a.config, "JSON config file");
    a.dataset_opt = cmd->add_option("--dataset", a.dataset, "moving-mnist or bouncing-ball");
    a.seed_opt = cmd->add_option("--seed", a.seed, "Generator seed (default 1)");
    a.out_opt = cmd->add_option("--out", a.out, "Output sequence file");
    a.mnist_opt = cmd->add_option("--mnist-dir", a.mnist_dir,
                                  "Directory with train-images-idx3-ubyte; synthetic digits are used without it");
    a.fields.add(cmd, json(MovingMnistConfig{}), "Generator");
    a.fields.add(cmd, json(BouncingBallConfig{}), "Generator");
}

int run_gen_data(const GenDataArgs& a) {
    const json file = read_config_file(a.config);
    require_known_keys(file, json{{"dataset", 0}, {"seed", 0}, {"out", 0}, {"mnist_dir", 0}, {"generator", 0}}, "config");
    const std::string dataset = string_setting(file, "dataset", a.dataset_opt, a.dataset, "moving-mnist");
    const DatasetKind kind = parse_dataset_kind(dataset);
    const std::uint64_t seed = a.seed_opt->count() > 0 ? a.seed : file.value("seed", std::uint64_t{1});
    const std::string out = string_setting(file, "out", a.out_opt, a.out);
    const std::string mnist_dir = string_setting(file, "mnist_dir", a.mnist_opt, a.mnist_dir);
    if (out.empty()) throw ConfigError("gen-data: --out is required");

    json gen = section_of(file, "generator");
    const json reference = kind == DatasetKind::MovingMnist ? json(MovingMnistConfig{}) : json(BouncingBallConfig{});
    for (const auto& key : a.fields.merge(gen, reference)) {
        throw ConfigError("gen-data: " + flag_name(key) + " does not apply to " + dataset);
    }

    std::vector<SequenceSample> samples;
    json resolved = {{"command", "gen-data"}, {"dataset", dataset}, {"seed", seed}, {"out", out}};
    if (kind == DatasetKind::MovingMnist) {
        const auto cfg = gen.get<MovingMnistConfig>();
        ImageSet digits;
        if (mnist_dir.empty()) {
            resolved["digits"] = "synthetic";
            digits = synthetic_digits(10000, derive_seed(seed, 0xD161));
        } else {
            const fs::path path = fs::path(mnist_dir) / "train-images-idx3-ubyte";
            resolved["digits"] = path.string();
            digits = load_mnist_idx(path);
        }
        resolved["generator"] = cfg;
        echo(resolved);
        samples = gen_occluded_moving_mnist(seed, cfg, digits);
    } else {
        const auto cfg = gen.get<BouncingBallConfig>();
        resolved["generator"] = cfg;
        echo(resolved);
        samples = gen_occluded_bouncing_ball(seed, cfg);
    }
    const auto bytes = encode_sequences(kind, samples);
    write_sequences(out, kind, samples);
    std::cout << "wrote " << samples.size() << " sequences (" << bytes.size() << " bytes) to " << out << '\n'
              << "digest fnv1a64 " << hex64(fnv1a64(bytes)) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, model, variant, data, test_data, out;
    FieldFlags fields;
    CLI::Option *model_opt = nullptr, *variant_opt = nullptr, *data_opt = nullptr, *test_opt = nullptr,
                *out_opt = nullptr;
};

void setup_train(CLI::App& app, TrainArgs& a) {
    auto* cmd = app.add_subcommand("train", "Train a model and write checkpoint and metrics");
    cmd->add_option("--config", a.config, "JSON config file");
    a.model_opt = cmd->add_option("--model", a.model, "vln or conv-pgp");
    a.variant_opt = cmd->add_option("--variant", a.variant, "base, ai, ldc or ldcai");
    a.data_opt = cmd->add_option("--data", a.data, "Training sequence file");
    a.test_opt = cmd->add_option("--test-data", a.test_data, "Held-out sequence file evaluated after every epoch");
    a.out_opt = cmd->add_option("--out", a.out, "Output directory");
    const std::map<std::string, std::string> notes = {
        {"given_frames", "default 8 for vln, 3 for conv-pgp"},
        {"closed_loop_frames", "default 2 for vln, 7 for conv-pgp"},
        {"height", "default: frame height of --data"},
        {"width", "default: frame width of --data"}};
    a.fields.add(cmd, json(TrainConfig{}), "Training", {}, notes);
    a.fields.add(cmd, json(VlnConfig{}), "Model", {"variant"}, notes);
    a.fields.add(cmd, json(ConvPgpConfig{}), "Model", {"variant"}, notes);
}

int run_train(const TrainArgs& a) {
    const json file = read_config_file(a.config);
    require_known_keys(file,
                       json{{"model", 0}, {"variant", 0}, {"data", 0}, {"test_data", 0}, {"out", 0},
                            {"model_config", 0}, {"train", 0}},
                       "config");
    const std::string model = string_setting(file, "model", a.model_opt, a.model, "vln");
    const json model_defaults = default_model_config(model);
    const std::string variant = string_setting(file, "variant", a.variant_opt, a.variant, "base");
    parse_variant(variant);
    const std::string data = string_setting(file, "data", a.data_opt, a.data);
    const std::string test_data = string_setting(file, "test_data", a.test_opt, a.test_data);
    const std::string out = string_setting(file, "out", a.out_opt, a.out);
    if (data.empty()) throw ConfigError("train: --data is required");
    if (out.empty()) throw ConfigError("train: --out is required");

    json train_section = section_of(file, "train");
    json model_section = section_of(file, "model_config");
    if (model_section.contains("variant")) throw ConfigError("train: set the variant at the top level, not in model_config");
    if (!train_section.contains("given_frames") && !train_section.contains("closed_loop_frames")) {
        train_section["given_frames"] = default_schedule(model).given_frames;
        train_section["closed_loop_frames"] = default_schedule(model).closed_loop_frames;
    }
    std::vector<std::string> leftover = a.fields.merge(train_section, json(TrainConfig{}));
    for (const auto& key : leftover) {
        if (!model_defaults.contains(key)) throw ConfigError("train: " + flag_name(key) + " does not apply to " + model);
        model_section[key] = scalar_from_text(a.fields.values.at(key));
    }
    const TrainConfig cfg = train_section.get<TrainConfig>();

    const SequenceFile train_file = read_sequences(data);
    if (train_file.samples.empty()) throw ConfigError("train: " + data + " holds no sequences");
    std::vector<SequenceSample> test_samples;
    if (!test_data.empty()) test_samples = read_sequences(test_data).samples;
    // Frame size follows the data unless set explicitly.
    if (!model_section.contains("height")) model_section["height"] = train_file.samples[0].height;
    if (!model_section.contains("width")) model_section["width"] = train_file.samples[0].width;
    model_section["variant"] = variant;
    AnyModel net = make_model(model, model_section, cfg.seed);

    const json resolved = {{"command", "train"},       {"model", model},          {"variant", variant},
                           {"data", data},             {"test_data", test_data},  {"out", out},
                           {"model_config", model_config_json(net)}, {"train", cfg},
                           {"params", count_parameters(model_parameters(net))}};
    echo(resolved);
    fs::create_directories(out);
    {
        std::ofstream cfg_out(fs::path(out) / "config.json");
        cfg_out << resolved.dump(2) << '\n';
    }
    std::vector<Metrics> history;
    try {
        history = with_model(net, [&](auto& m) {
            return train(m, train_file.samples, test_samples, cfg, [](const Metrics& e) {
                std::cout << "epoch " << e.epoch << " train_bce " << e.train_bce << " test_bce " << e.test_bce
                          << " seconds " << e.seconds << std::endl;
            });
        });
    } catch (const NumericalError& e) {
        throw NumericalFailure(e.what());
    }
    save_checkpoint(fs::path(out) / "model.ldvp", net);
    std::ofstream csv(fs::path(out) / "metrics.csv", std::ios::binary);
    write_metrics_csv(csv, history);
    std::cout << "wrote " << (fs::path(out) / "model.ldvp").string() << " and " << (fs::path(out) / "metrics.csv").string()
              << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// eval / predict
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data;
    std::optional<std::int64_t> given, closed;
    std::int64_t batch_size = 32;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
    auto* cmd = app.add_subcommand("eval", "Test BCE and parameter count of a checkpoint");
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    cmd->add_option("--data", a.data, "Sequence file")->required();
    cmd->add_option("--given-frames", a.given, "Override the model's default schedule");
    cmd->add_option("--closed-loop-frames", a.closed, "Override the model's default schedule");
    cmd->add_option("--batch-size", a.batch_size, "Evaluation batch size")->check(CLI::PositiveNumber);
}

int run_eval(const EvalArgs& a) {
    const AnyModel net = load_checkpoint(a.checkpoint);
    const std::string kind = model_kind(net);
    const RolloutSchedule schedule = resolve_schedule(kind, a.given, a.closed);
    echo({{"command", "eval"},
          {"checkpoint", a.checkpoint},
          {"data", a.data},
          {"model", kind},
          {"model_config", model_config_json(net)},
          {"schedule", schedule_json(schedule)},
          {"batch_size", a.batch_size}});
    const auto samples = read_sequences(a.data).samples;
    const double bce = with_model(net, [&](const auto& m) { return evaluate(m, samples, schedule, a.batch_size); });
    if (!std::isfinite(bce)) throw NumericalFailure("eval: non-finite test loss");
    std::cout << std::setprecision(17) << "test_bce " << bce << '\n'
              << "params " << count_parameters(model_parameters(net)) << '\n'
              << "sequences " << samples.size() << '\n';
    return 0;
}

struct PredictArgs {
    std::string checkpoint, data, out_dir;
    std::int64_t index = 0;
    std::optional<std::int64_t> given, closed;
};

void setup_predict(CLI::App& app, PredictArgs& a) {
    auto* cmd = app.add_subcommand("predict", "Dump input, predicted and ground-truth frames of one sequence");
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    cmd->add_option("--data", a.data, "Sequence file")->required();
    cmd->add_option("--index", a.index, "Sequence index")->check(CLI::NonNegativeNumber);
    cmd->add_option("--out-dir", a.out_dir, "Output directory")->required();
    cmd->add_option("--given-frames", a.given, "Override the model's default schedule");
    cmd->add_option("--closed-loop-frames", a.closed, "Override the model's default schedule");
}

int run_predict(const PredictArgs& a) {
    const AnyModel net = load_checkpoint(a.checkpoint);
    const std::string kind = model_kind(net);
    const RolloutSchedule schedule = resolve_schedule(kind, a.given, a.closed);
    echo({{"command", "predict"},
          {"checkpoint", a.checkpoint},
          {"data", a.data},
          {"index", a.index},
          {"out_dir", a.out_dir},
          {"model", kind},
          {"schedule", schedule_json(schedule)}});
    const auto samples = read_sequences(a.data).samples;
    if (a.index >= static_cast<std::int64_t>(samples.size())) {
        throw ConfigError("predict: index " + std::to_string(a.index) + " but the file holds " +
                          std::to_string(samples.size()) + " sequences");
    }
    const SequenceBatch batch = make_batch(samples, {static_cast<std::size_t>(a.index)});
    const Rollout r = with_model(net, [&](const auto& m) { return m.rollout(batch, schedule); });
    fs::create_directories(a.out_dir);
    const auto& s = samples[static_cast<std::size_t>(a.index)];
    for (std::int64_t t = 0; t < s.frames; ++t) {
        const auto tag = two_digits(t);
        write_pgm(fs::path(a.out_dir) / ("input_" + tag + ".pgm"), s.width, s.height, s.occluded.data() + t * s.plane());
        write_pgm(fs::path(a.out_dir) / ("truth_" + tag + ".pgm"), s.width, s.height, s.clean.data() + t * s.plane());
    }
    for (std::size_t k = 0; k < r.predictions.size(); ++k) {
        const auto frame = r.first_frame + static_cast<std::int64_t>(k);
        const auto gray = to_gray(r.predictions[k].data());
        write_pgm(fs::path(a.out_dir) / ("pred_" + two_digits(frame) + ".pgm"), s.width, s.height, gray.data());
    }
    const double bce = rollout_loss(r, batch).item();
    std::cout << std::setprecision(17) << "sequence_bce " << bce << '\n'
              << "wrote " << s.frames << " input, " << s.frames << " truth and " << r.predictions.size()
              << " predicted frames to " << a.out_dir << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

struct GradCheckArgs {
    std::string model = "vln", variant = "ldcai";
    double tolerance = 1e-4, step = 1e-5;
    std::uint64_t seed = 7;
};

void setup_grad_check(CLI::App& app, GradCheckArgs& a) {
    auto* cmd = app.add_subcommand("grad-check", "Finite-difference gradient checks at toy size");
    cmd->add_option("--model", a.model, "vln or conv-pgp")->capture_default_str();
    cmd->add_option("--variant", a.variant, "base, ai, ldc or ldcai")->capture_default_str();
    cmd->add_option("--tolerance", a.tolerance, "Maximum relative error")->capture_default_str();
    cmd->add_option("--step", a.step, "Central difference step")->capture_default_str();
    cmd->add_option("--seed", a.seed, "Seed for the random toy problem")->capture_default_str();
}

int run_grad_check(const GradCheckArgs& a) {
    default_model_config(a.model);
    const Variant variant = parse_variant(a.variant);
    GradCheckOptions opt;
    opt.tolerance = a.tolerance;
    opt.step = a.step;
    echo({{"command", "grad-check"},
          {"model", a.model},
          {"variant", a.variant},
          {"tolerance", a.tolerance},
          {"step", a.step},
          {"floor", opt.floor},
          {"seed", a.seed}});
    bool ok = true;
    for (const auto& r : run_gradcheck_suite(a.model, variant, opt, a.seed)) {
        ok &= r.passed;
        std::cout << (r.passed ? "ok   " : "FAIL ") << std::left << std::setw(44) << r.name << " n=" << std::setw(6)
                  << r.checked << " max_rel_err " << std::scientific << std::setprecision(3) << r.max_rel_error
                  << std::defaultfloat << '\n';
    }
    std::cout << (ok ? "all gradients match" : "gradient check failed") << '\n';
    if (!ok) throw NumericalFailure("grad-check: relative error above tolerance");
    return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

struct InspectArgs {
    std::string checkpoint, out_dir, data;
    std::int64_t index = 0;
    std::optional<std::int64_t> step;
};

void setup_inspect(CLI::App& app, InspectArgs& a) {
    auto* cmd = app.add_subcommand("inspect", "Dump learned bias maps and per-channel activations");
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
    cmd->add_option("--out-dir", a.out_dir, "Output directory")->required();
    cmd->add_option("--data", a.data, "Sequence file; activations are dumped only when given");
    cmd->add_option("--index", a.index, "Sequence index")->check(CLI::NonNegativeNumber);
    cmd->add_option("--step", a.step, "Rollout step whose activations are dumped (default: last given frame)");
}

void print_stats(const std::string& name, const MapStats& st) {
    std::cout << std::left << std::setw(24) << name << std::setprecision(6) << " mean " << st.mean << " std "
              << st.stddev << " min " << st.min << " max " << st.max << '\n';
}

void dump_channels(const fs::path& dir, const std::string& prefix, const Tensor& act) {
    const std::int64_t c = act.dim(1), h = act.dim(2), w = act.dim(3);
    const auto values = act.data();
    for (std::int64_t k = 0; k < c; ++k) {
        const auto plane = values.subspan(static_cast<std::size_t>(k * h * w), static_cast<std::size_t>(h * w));
        dump_map(dir, prefix + "_c" + (k < 100 ? two_digits(k) : std::to_string(k)), h, w, plane);
    }
    std::cout << "dumped " << c << " channels of " << prefix << " (" << h << "x" << w << ")\n";
}

int run_inspect(const InspectArgs& a) {
    const AnyModel net = load_checkpoint(a.checkpoint);
    const std::string kind = model_kind(net);
    const RolloutSchedule schedule = default_schedule(kind);
    const std::int64_t step = a.step.value_or(schedule.given_frames - 1);
    echo({{"command", "inspect"},
          {"checkpoint", a.checkpoint},
          {"out_dir", a.out_dir},
          {"data", a.data},
          {"index", a.index},
          {"step", step},
          {"model", kind},
          {"model_config", model_config_json(net)}});
    const fs::path dir = a.out_dir;
    fs::create_directories(dir);
    const auto maps = bias_maps(net);
    if (maps.empty()) std::cout << "no location-bias maps in this variant\n";
    for (const auto& m : maps) {
        print_stats(m.name, dump_map(dir, m.name, m.map.dim(0), m.map.dim(1), m.map.data()));
    }
    if (maps.size() >= 2) {
        // Only the sum of a pair enters the layer.
        const Tensor total = add(maps[0].map, maps[1].map);
        const std::string name = maps[0].name.substr(0, maps[0].name.size() - 3) + ".w_sum";
        print_stats(name, dump_map(dir, name, total.dim(0), total.dim(1), total.data()));
    }
    if (a.data.empty()) return 0;

    const auto samples = read_sequences(a.data).samples;
    if (a.index >= static_cast<std::int64_t>(samples.size())) throw ConfigError("inspect: index out of range");
    const SequenceBatch batch = make_batch(samples, {static_cast<std::size_t>(a.index)});
    if (const auto* vln = std::get_if<VlnModel>(&net)) {
        VlnTrace trace;
        vln->rollout(batch, schedule, &trace);
        if (step < 0 || step >= static_cast<std::int64_t>(trace.conv1.size())) throw ConfigError("inspect: step out of range");
        const auto s = static_cast<std::size_t>(step);
        dump_channels(dir, "conv1", trace.conv1[s]);
        dump_channels(dir, "conv2", trace.conv2[s]);
        dump_channels(dir, "lstm", trace.hidden[s]);
    } else {
        std::vector<GaeState> mappings;
        std::get<ConvPgpModel>(net).rollout(batch, schedule, &mappings);
        const std::int64_t k = step - 2;
        if (k < 0 || k >= static_cast<std::int64_t>(mappings.size())) {
            throw ConfigError("inspect: conv-pgp has mappings for steps 2.." + std::to_string(mappings.size() + 1));
        }
        dump_channels(dir, "mapping", mappings[static_cast<std::size_t>(k)].mapping);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Location-dependent video prediction toolkit"};
    app.require_subcommand(1);
    GenDataArgs gen;
    TrainArgs tr;
    EvalArgs ev;
    PredictArgs pr;
    GradCheckArgs gc;
    InspectArgs in;
    setup_gen_data(app, gen);
    setup_train(app, tr);
    setup_eval(app, ev);
    setup_predict(app, pr);
    setup_grad_check(app, gc);
    setup_inspect(app, in);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kUsageError;
    }
    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "gen-data") return run_gen_data(gen);
        if (name == "train") return run_train(tr);
        if (name == "eval") return run_eval(ev);
        if (name == "predict") return run_predict(pr);
        if (name == "grad-check") return run_grad_check(gc);
        return run_inspect(in);
    } catch (const NumericalFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kNumericalError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsageError;
    }
}
