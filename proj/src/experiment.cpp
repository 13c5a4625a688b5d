#include "dunet/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dunet/checkpoint.hpp"
#include "dunet/kernels.hpp"

namespace dunet::experiment {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using pipeline::BinaryMask;
using pipeline::Split;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Typed access to one JSON object that records every problem instead of
// stopping at the first.
class Section {
   public:
    Section(const json* j, std::string path, std::vector<std::string>& errors) : j_(j), path_(std::move(path)), errors_(errors) {
        if (j_ && !j_->is_object()) {
            errors_.push_back(path_ + ": expected an object");
            j_ = nullptr;
        }
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_ && j_->contains(key) && !(*j_)[key].is_null();
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (!has(key)) return;
        const json& v = (*j_)[key];
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.is_number_integer() && !v.is_number_unsigned() && v.template get<long long>() < 0) {
                        throw std::invalid_argument("expected a non-negative integer");
                    }
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v.is_number()) throw std::invalid_argument("expected a number");
            } else {
                if (!v.is_string()) throw std::invalid_argument("expected a string");
            }
            out = v.template get<T>();
        } catch (const std::exception& e) {
            errors_.push_back(path_ + "." + key + ": " + e.what());
        }
    }

    Section child(const char* key) {
        seen_.insert(key);
        return Section(j_ && j_->contains(key) ? &(*j_)[key] : nullptr, path_ + "." + key, errors_);
    }

    void reject_unknown() {
        if (!j_) return;
        for (const auto& [k, v] : j_->items()) {
            if (!seen_.count(k)) errors_.push_back(path_ + "." + k + ": unknown key");
        }
    }

    bool present() const { return j_ != nullptr; }

   private:
    const json* j_;
    std::string path_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

template <typename F>
void attempt(std::vector<std::string>& errors, const std::string& where, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        errors.push_back(where + ": " + e.what());
    }
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

bool is_fundus(const DatasetSection& d) {
    if (d.synthetic) return d.synthetic->task == pipeline::Task::fundus;
    return d.layout != pipeline::Layout::hc18;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    std::vector<std::string> errors;
    ExperimentConfig cfg;
    Section top(&doc, "config", errors);

    top.get("seed", cfg.seed);
    std::string out;
    top.get("output_dir", out);
    if (out.empty()) errors.push_back("config.output_dir: required");
    cfg.output_dir = resolve(out, base_dir);

    auto& d = cfg.dataset;
    Section ds = top.child("dataset");
    if (!ds.present()) errors.push_back("config.dataset: required");
    std::string layout = "synthetic", root;
    ds.get("layout", layout);
    attempt(errors, "config.dataset.layout", [&] { d.layout = pipeline::layout_from_string(layout); });
    ds.get("root", root);
    ds.get("target", d.target);
    ds.get("image_size", d.image_size);
    ds.get("channels", d.channels);
    ds.get("test_fraction", d.test_fraction);
    Section syn = ds.child("synthetic");
    if (syn.present()) {
        SyntheticSource s;
        s.seed = cfg.seed;
        std::string task = "fundus";
        syn.get("task", task);
        attempt(errors, "config.dataset.synthetic.task", [&] { s.task = pipeline::task_from_string(task); });
        syn.get("n", s.n);
        syn.get("test", s.test);
        syn.get("seed", s.seed);
        syn.reject_unknown();
        if (s.n < 1) errors.push_back("config.dataset.synthetic.n: must be >= 1");
        if (s.test < 0 || s.test > s.n) errors.push_back("config.dataset.synthetic.test: must be in [0, n]");
        d.synthetic = s;
    }
    Section roi = ds.child("roi");
    if (roi.present()) {
        d.roi = true;
        roi.get("r_min", d.roi_r_min);
        roi.get("r_max", d.roi_r_max);
        roi.reject_unknown();
        if (d.roi_r_min < 1 || d.roi_r_min >= d.roi_r_max) errors.push_back("config.dataset.roi: need 1 <= r_min < r_max");
    }
    ds.reject_unknown();
    if (root.empty() == !d.synthetic) errors.push_back("config.dataset: give exactly one of root and synthetic");
    if (!root.empty()) {
        d.root = resolve(root, base_dir);
        if (!fs::is_directory(d.root)) errors.push_back("config.dataset.root: " + d.root.string() + " is not a directory");
    }
    if (d.target != "disc" && d.target != "cup") errors.push_back("config.dataset.target: must be disc or cup");
    if (d.target == "cup" && !is_fundus(d)) errors.push_back("config.dataset.target: cup needs a fundus dataset");
    if (d.channels != 1 && d.channels != 3) errors.push_back("config.dataset.channels: must be 1 or 3");
    if (!(d.test_fraction >= 0 && d.test_fraction < 1)) errors.push_back("config.dataset.test_fraction: must be in [0, 1)");
    if (d.roi && !is_fundus(d)) errors.push_back("config.dataset.roi: only meaningful for fundus images");

    Section sc = top.child("scattering");
    sc.get("J", cfg.scattering.J);
    sc.get("L", cfg.scattering.L);
    sc.get("order", cfg.scattering.order);
    sc.reject_unknown();
    cfg.scattering.height = cfg.scattering.width = d.image_size;

    Section md = top.child("model");
    std::string kind = "dunet";
    md.get("kind", kind);
    attempt(errors, "config.model.kind", [&] { cfg.model.kind = nets::model_kind_from_string(kind); });
    cfg.model.depth = cfg.scattering.J;
    md.get("depth", cfg.model.depth);
    md.get("base_channels", cfg.model.base_channels);
    md.reject_unknown();
    cfg.model.in_channels = d.channels;
    cfg.model.height = cfg.model.width = d.image_size;

    bool sc_ok = false;
    if (nets::uses_sc(cfg.model.kind)) {
        attempt(errors, "config.scattering", [&] {
            cfg.scattering.validate();
            sc_ok = true;
        });
    }
    if (sc_ok) cfg.model.sc_channels = scattering::count_paths(cfg.scattering) * d.channels;
    attempt(errors, "config.model", [&] { cfg.model.validate(); });
    if (sc_ok) attempt(errors, "config.model", [&] { nets::check_pairing(cfg.model, cfg.scattering); });

    Section tr = top.child("train");
    cfg.train.seed = cfg.seed;
    tr.get("lr", cfg.train.lr);
    tr.get("epochs", cfg.train.epochs);
    tr.get("batch_size", cfg.train.batch_size);
    std::string loss = to_string(cfg.train.loss), warm;
    tr.get("loss", loss);
    attempt(errors, "config.train.loss", [&] { cfg.train.loss = loss_kind_from_string(loss); });
    tr.get("split", cfg.train_split);
    tr.get("warm_start", warm);
    tr.get("checkpoint_every", cfg.checkpoint_every);
    tr.reject_unknown();
    if (!warm.empty()) {
        cfg.train.warm_start = resolve(warm, base_dir);
        if (!fs::exists(*cfg.train.warm_start)) errors.push_back("config.train.warm_start: " + warm + " does not exist");
    }
    attempt(errors, "config.train", [&] { cfg.train.validate(); });
    if (cfg.train_split != "train" && cfg.train_split != "all") errors.push_back("config.train.split: must be train or all");
    if (cfg.checkpoint_every < 0) errors.push_back("config.train.checkpoint_every: must be >= 0");

    Section ev = top.child("eval");
    ev.get("threshold", cfg.eval.threshold);
    std::string variant = "max";
    ev.get("hausdorff", variant);
    attempt(errors, "config.eval.hausdorff", [&] { cfg.eval.hausdorff = metrics::hausdorff_variant_from_string(variant); });
    ev.get("split", cfg.eval.split);
    ev.get("head_circumference", cfg.eval.head_circumference);
    ev.reject_unknown();
    if (!(cfg.eval.threshold > 0 && cfg.eval.threshold < 1)) errors.push_back("config.eval.threshold: must be in (0, 1)");
    if (cfg.eval.split != "train" && cfg.eval.split != "test" && cfg.eval.split != "all") {
        errors.push_back("config.eval.split: must be train, test or all");
    }
    top.reject_unknown();

    if (!errors.empty()) {
        std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() > 1 ? "s" : "") + "): ";
        for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : "") + errors[i];
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    try {
        return parse_config(ss.str(), base);
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset.synthetic && cfg.dataset.synthetic->seed == cfg.seed) cfg.dataset.synthetic->seed = seed;
    cfg.seed = seed;
    cfg.train.seed = seed;
}

namespace {

json dataset_json(const DatasetSection& d) {
    json j;
    j["layout"] = pipeline::to_string(d.layout);
    if (d.synthetic) {
        j["synthetic"] = {{"task", pipeline::to_string(d.synthetic->task)},
                          {"n", d.synthetic->n},
                          {"test", d.synthetic->test},
                          {"seed", d.synthetic->seed}};
    } else {
        j["root"] = fs::weakly_canonical(d.root).generic_string();
    }
    j["target"] = d.target;
    j["image_size"] = d.image_size;
    j["channels"] = d.channels;
    j["test_fraction"] = d.test_fraction;
    if (d.roi) j["roi"] = {{"r_min", d.roi_r_min}, {"r_max", d.roi_r_max}};
    return j;
}

}  // namespace

std::string to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir.generic_string();
    j["dataset"] = dataset_json(cfg.dataset);
    j["scattering"] = {{"J", cfg.scattering.J}, {"L", cfg.scattering.L}, {"order", cfg.scattering.order}};
    j["model"] = {{"kind", nets::to_string(cfg.model.kind)},
                  {"depth", cfg.model.depth},
                  {"base_channels", cfg.model.base_channels}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"epochs", cfg.train.epochs},
                  {"batch_size", cfg.train.batch_size},
                  {"loss", to_string(cfg.train.loss)},
                  {"split", cfg.train_split},
                  {"warm_start", cfg.train.warm_start ? json(cfg.train.warm_start->generic_string()) : json(nullptr)},
                  {"checkpoint_every", cfg.checkpoint_every}};
    j["eval"] = {{"threshold", cfg.eval.threshold},
                 {"hausdorff", metrics::to_string(cfg.eval.hausdorff)},
                 {"split", cfg.eval.split},
                 {"head_circumference", cfg.eval.head_circumference}};
    return j.dump(2) + "\n";
}

std::string dataset_fingerprint(const ExperimentConfig& cfg) { return dataset_json(cfg.dataset).dump(); }

namespace {

Tensor to_channels(const Tensor& img, int channels) {
    if (channels == 1) return img.c() == 1 ? img : pipeline::to_grayscale(img);
    if (img.c() == 3) return img;
    if (img.c() != 1) throw ShapeError("expected a gray or RGB image, got " + img.shape().str());
    Tensor out(Shape{1, 3, img.h(), img.w()});
    const std::size_t plane = img.shape().plane();
    for (int c = 0; c < 3; ++c) std::copy(img.data().begin(), img.data().end(), out.data().begin() + c * plane);
    return out;
}

BinaryMask resample_mask(const BinaryMask& m, int size) {
    if (m.height == size && m.width == size) return m;
    return BinaryMask::from_tensor(pipeline::resize_bilinear(m.to_tensor(), size, size), 0.5f);
}

// Brings one raw sample to network resolution, with the ROI crop when enabled.
PreparedSample prepare(const DatasetSection& d, std::string id, const Tensor& raw, std::optional<BinaryMask> gt,
                       std::optional<double> pixel_mm, Split split) {
    PreparedSample s;
    s.id = std::move(id);
    s.split = split;
    const Tensor img = to_channels(raw, d.channels);
    const int S = d.image_size;
    if (d.roi) {
        const Tensor gray = img.c() == 1 ? img : pipeline::to_grayscale(img);
        const int r_max = std::min(d.roi_r_max, std::min(gray.h(), gray.w()) / 2);
        const pipeline::RoiBox box = pipeline::localize_od(gray, d.roi_r_min, r_max);
        s.image = pipeline::extract_roi(img, box, S);
        if (gt) s.eval_gt = BinaryMask::from_tensor(pipeline::extract_roi(gt->to_tensor(), box, S), 0.5f);
        s.eval_height = s.eval_width = S;
        s.pixel_size_mm = pixel_mm ? *pixel_mm * box.side / S : 1.0;
        if (s.eval_gt) s.mask = s.eval_gt;
    } else {
        s.image = img.h() == S && img.w() == S ? img : pipeline::resize_bilinear(img, S, S);
        s.eval_gt = std::move(gt);
        s.eval_height = raw.h();
        s.eval_width = raw.w();
        s.pixel_size_mm = pixel_mm.value_or(1.0);
        if (s.eval_gt) s.mask = resample_mask(*s.eval_gt, S);
    }
    return s;
}

}  // namespace

PreparedDataset prepare_dataset(const ExperimentConfig& cfg, bool allow_missing_gt) {
    const DatasetSection& d = cfg.dataset;
    PreparedDataset out;
    if (d.synthetic) {
        const auto& src = *d.synthetic;
        const auto samples = pipeline::generate_synthetic(src.task, src.n, src.seed, d.image_size);
        const int first_test = src.n - src.test;
        for (int i = 0; i < src.n; ++i) {
            const auto& s = samples[static_cast<std::size_t>(i)];
            const bool fundus = src.task == pipeline::Task::fundus;
            std::optional<double> px;
            if (!fundus) px = s.pixel_size_mm;
            out.samples.push_back(prepare(d, s.id, s.image, d.target == "cup" ? s.cup : s.mask, px,
                                          i >= first_test ? Split::test : Split::train));
        }
        return out;
    }
    pipeline::LoadOptions opt;
    opt.layout = d.layout;
    opt.target = d.target;
    opt.test_fraction = d.test_fraction;
    opt.allow_missing_mask = allow_missing_gt;
    const auto loaded = pipeline::load_dataset(d.root, opt);
    if (!loaded.errors.empty()) {
        std::string msg = "dataset: " + std::to_string(loaded.errors.size()) + " unusable sample(s): " + loaded.errors.front();
        if (loaded.errors.size() > 1) msg += " (and " + std::to_string(loaded.errors.size() - 1) + " more)";
        out.warnings.push_back(msg);
    }
    out.warnings.insert(out.warnings.end(), loaded.warnings.begin(), loaded.warnings.end());
    for (const auto& r : loaded.records) {
        const Tensor raw = pipeline::read_png(r.image);
        std::optional<BinaryMask> gt;
        if (r.ellipse || (r.mask && fs::exists(*r.mask))) gt = pipeline::load_mask(r, raw.h(), raw.w());
        out.samples.push_back(prepare(d, r.id, raw, std::move(gt), r.pixel_size_mm, r.split));
    }
    return out;
}

std::vector<const PreparedSample*> select_split(const PreparedDataset& d, const std::string& split) {
    std::vector<const PreparedSample*> out;
    for (const auto& s : d.samples) {
        const bool test = s.split == Split::test;
        if (split == "all" || (split == "test") == test) out.push_back(&s);
    }
    return out;
}

namespace {

Tensor stack_images(const std::vector<const PreparedSample*>& samples) {
    std::vector<Tensor> imgs;
    for (const auto* s : samples) imgs.push_back(s->image);
    return stack_batch(imgs);
}

Tensor scatter_images(const ExperimentConfig& cfg, const Tensor& images) {
    if (!nets::uses_sc(cfg.model.kind)) return {};
    return scattering::scatter_batch(images, scattering::build_filter_bank(cfg.scattering));
}

}  // namespace

nets::TrainData make_train_data(const ExperimentConfig& cfg, const std::vector<const PreparedSample*>& samples) {
    if (samples.empty()) throw Error("no samples to train on");
    nets::TrainData d;
    d.images = stack_images(samples);
    std::vector<Tensor> masks;
    for (const auto* s : samples) {
        if (!s->mask) throw Error(s->id + ": no ground truth to train on");
        masks.push_back(s->mask->to_tensor());
    }
    d.masks = stack_batch(masks);
    d.sc = scatter_images(cfg, d.images);
    return d;
}

nets::ModelSpec resolved_model(const ExperimentConfig& cfg) { return cfg.model; }

namespace {

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::trunc | std::ios::binary);
    if (!f) throw Error("cannot open " + p.string() + " for writing");
    f << text;
}

std::string header(const ExperimentConfig& cfg) {
    return "seed=" + std::to_string(cfg.seed) + " model=" + nets::to_string(cfg.model.kind);
}

}  // namespace

TrainRun run_train(const ExperimentConfig& cfg, std::ostream* log) {
    fs::create_directories(cfg.output_dir);
    write_text(cfg.output_dir / "config.json", to_json(cfg));
    const PreparedDataset data = prepare_dataset(cfg);
    std::ofstream logf(cfg.output_dir / "train.log", std::ios::trunc);
    auto say = [&](const std::string& line) {
        logf << line << "\n";
        logf.flush();
        if (log) *log << line << "\n";
    };
    say("# " + header(cfg) + " threads=" + std::to_string(kernels::thread_count()));
    for (const auto& w : data.warnings) say("warning: " + w);
    const auto samples = select_split(data, cfg.train_split);
    if (samples.empty()) throw Error("train: split '" + cfg.train_split + "' is empty");
    say("samples " + std::to_string(samples.size()));
    const nets::TrainData td = make_train_data(cfg, samples);

    TrainRun run{nets::build_model(cfg.model), {}};
    const fs::path ckpt = cfg.output_dir / "model.sgw";
    const auto start = std::chrono::steady_clock::now();
    auto hook = [&](int epoch, double loss, nets::Model& m) {
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ostringstream line;
        line << "epoch " << epoch << " loss " << std::setprecision(9) << loss << " elapsed_s " << std::setprecision(4) << sec;
        say(line.str());
        if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) write_checkpoint(ckpt, snapshot_parameters(m.graph));
        return true;
    };
    run.result = nets::train(run.model, td, cfg.train, hook);
    write_checkpoint(ckpt, snapshot_parameters(run.model.graph));
    nets::write_loss_csv(cfg.output_dir / "loss.csv", run.result, cfg.seed);
    say("wrote " + ckpt.generic_string());
    return run;
}

fs::path eval_dir(const ExperimentConfig& cfg) { return cfg.output_dir / "eval" / cfg.eval.split; }

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

metrics::Aggregate aggregate_values(const std::vector<double>& v) {
    // Same arithmetic as metrics::aggregate so pooled rows match single reports.
    metrics::MetricsReport r;
    for (double x : v) r.per_sample.push_back({"", x, 0, 0, 0});
    metrics::aggregate(r);
    return r.aggregate.at("dice");
}

json aggregate_json(const metrics::Aggregate& a) {
    return {{"mean", number_or_null(a.mean)}, {"std", number_or_null(a.std)}, {"count", a.count}};
}

}  // namespace

EvalRun run_eval(const ExperimentConfig& cfg, const fs::path& checkpoint, std::ostream* log) {
    nets::Model model = nets::build_model(cfg.model);
    restore_parameters(model.graph, read_checkpoint(checkpoint));

    const PreparedDataset data = prepare_dataset(cfg, true);
    EvalRun run;
    run.warnings = data.warnings;
    const auto samples = select_split(data, cfg.eval.split);
    if (samples.empty()) throw Error("eval: split '" + cfg.eval.split + "' is empty");

    const fs::path dir = eval_dir(cfg);
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "prob");
    const Tensor images = stack_images(samples);
    const Tensor sc = scatter_images(cfg, images);
    const Tensor prob = nets::infer(model, images, nets::uses_sc(cfg.model.kind) ? &sc : nullptr);

    const std::map<std::string, std::string> text{{"seed", std::to_string(cfg.seed)},
                                                  {"model", nets::to_string(cfg.model.kind)}};
    std::vector<std::string> ids;
    std::vector<BinaryMask> preds, gts;
    std::vector<double> pixel;
    std::vector<std::size_t> with_gt;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const PreparedSample& s = *samples[i];
        Tensor p = prob.sample(static_cast<int>(i));
        run.entropy_bits.push_back(nets::mean_entropy(p));
        if (p.h() != s.eval_height || p.w() != s.eval_width) p = pipeline::resize_bilinear(p, s.eval_height, s.eval_width);
        const BinaryMask pred = BinaryMask::from_tensor(p, static_cast<float>(cfg.eval.threshold));
        pipeline::write_mask_png(dir / "masks" / (s.id + ".png"), pred, text);
        pipeline::write_png(dir / "prob" / (s.id + ".png"), p, text);
        if (!s.eval_gt) {
            run.warnings.push_back(s.id + ": no ground truth; metrics left blank");
            continue;
        }
        with_gt.push_back(i);
        ids.push_back(s.id);
        preds.push_back(pred);
        gts.push_back(*s.eval_gt);
        pixel.push_back(s.pixel_size_mm);
    }
    metrics::ReportOptions opt;
    opt.variant = cfg.eval.hausdorff;
    opt.head_circumference = cfg.eval.head_circumference;
    const metrics::MetricsReport partial =
        ids.empty() ? metrics::MetricsReport{} : metrics::report(ids, preds, gts, pixel, opt);
    std::size_t k = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (k < with_gt.size() && with_gt[k] == i) {
            run.report.per_sample.push_back(partial.per_sample[k++]);
        } else {
            run.report.per_sample.push_back({samples[i]->id, kNaN, kNaN, kNaN, kNaN});
        }
    }
    run.report.miou = ids.empty() ? kNaN : partial.miou;
    metrics::aggregate(run.report);

    const std::vector<std::string> comments{header(cfg), "split=" + cfg.eval.split,
                                            "threshold=" + std::to_string(cfg.eval.threshold),
                                            "hausdorff=" + metrics::to_string(cfg.eval.hausdorff)};
    metrics::write_metrics_csv(dir / "metrics.csv", run.report, comments);
    {
        std::ostringstream f;
        f << "# " << header(cfg) << "\nid,entropy_bits\n" << std::setprecision(9);
        for (std::size_t i = 0; i < samples.size(); ++i) f << samples[i]->id << "," << run.entropy_bits[i] << "\n";
        write_text(dir / "sharpness.csv", f.str());
    }
    json summary;
    summary["seed"] = cfg.seed;
    summary["model"] = nets::to_string(cfg.model.kind);
    summary["split"] = cfg.eval.split;
    summary["dataset"] = dataset_json(cfg.dataset);
    summary["threshold"] = cfg.eval.threshold;
    summary["hausdorff"] = metrics::to_string(cfg.eval.hausdorff);
    summary["count"] = samples.size();
    summary["miou"] = number_or_null(run.report.miou);
    json agg;
    for (const auto& [name, a] : run.report.aggregate) agg[name] = aggregate_json(a);
    agg["entropy_bits"] = aggregate_json(aggregate_values(run.entropy_bits));
    summary["aggregate"] = agg;
    json rows = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& m = run.report.per_sample[i];
        rows.push_back({{"id", m.id},
                        {"dice", number_or_null(m.dice)},
                        {"iou", number_or_null(m.iou)},
                        {"hausdorff_mm", number_or_null(m.hausdorff_mm)},
                        {"hc_mm", number_or_null(m.hc_mm)},
                        {"entropy_bits", number_or_null(run.entropy_bits[i])}});
    }
    summary["per_sample"] = rows;
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    if (log) {
        for (const auto& w : run.warnings) *log << "warning: " << w << "\n";
        const auto& dice = run.report.aggregate.at("dice");
        *log << "dice " << dice.mean << " +- " << dice.std << " over " << dice.count << " samples, miou " << run.report.miou
             << "\n";
    }
    return run;
}

std::vector<CompareRow> compare(const std::vector<ExperimentConfig>& runs) {
    if (runs.empty()) throw Error("compare: no runs");
    const std::string fp = dataset_fingerprint(runs.front());
    struct Pool {
        int runs = 0, count = 0;
        std::vector<double> dice, iou, hd, hc, ent;
        double miou_weighted = 0;
        int miou_weight = 0;
    };
    std::map<nets::ModelKind, Pool> pools;
    for (const auto& cfg : runs) {
        if (dataset_fingerprint(cfg) != fp) {
            throw Error("compare: mismatched datasets (" + cfg.output_dir.generic_string() + " uses " +
                        dataset_fingerprint(cfg) + ", first run uses " + fp + ")");
        }
        const fs::path p = eval_dir(cfg) / "summary.json";
        std::ifstream f(p);
        if (!f) throw Error("compare: missing " + p.string() + " (run eval first)");
        json s;
        try {
            s = json::parse(f);
        } catch (const std::exception& e) {
            throw Error("compare: " + p.string() + ": " + e.what());
        }
        Pool& pool = pools[cfg.model.kind];
        ++pool.runs;
        pool.count += s.at("count").get<int>();
        for (const auto& r : s.at("per_sample")) {
            pool.dice.push_back(number_from(r.at("dice")));
            pool.iou.push_back(number_from(r.at("iou")));
            pool.hd.push_back(number_from(r.at("hausdorff_mm")));
            pool.hc.push_back(number_from(r.at("hc_mm")));
            pool.ent.push_back(number_from(r.at("entropy_bits")));
        }
        const int w = s.at("aggregate").at("dice").at("count").get<int>();
        if (w > 0) {
            pool.miou_weighted += number_from(s.at("miou")) * w;
            pool.miou_weight += w;
        }
    }
    std::vector<CompareRow> rows;
    for (nets::ModelKind k : {nets::ModelKind::unet, nets::ModelKind::scunet, nets::ModelKind::latefusion, nets::ModelKind::dunet}) {
        const auto it = pools.find(k);
        if (it == pools.end()) continue;
        const Pool& p = it->second;
        CompareRow r;
        r.kind = k;
        r.runs = p.runs;
        r.count = p.count;
        r.dice = aggregate_values(p.dice);
        r.iou = aggregate_values(p.iou);
        r.hausdorff_mm = aggregate_values(p.hd);
        r.hc_mm = aggregate_values(p.hc);
        r.entropy_bits = aggregate_values(p.ent);
        r.miou = p.miou_weight ? p.miou_weighted / p.miou_weight : kNaN;
        rows.push_back(r);
    }
    return rows;
}

namespace {

std::string num(double v) {
    if (!std::isfinite(v)) return "";
    std::ostringstream s;
    s << std::setprecision(9) << v;
    return s.str();
}

}  // namespace

void write_compare_csv(const fs::path& path, const std::vector<CompareRow>& rows) {
    std::ostringstream f;
    f << "model,runs,samples,dice_mean,dice_std,iou_mean,iou_std,miou,hausdorff_mm_mean,hausdorff_mm_std,hc_mm_mean,hc_mm_std,"
         "entropy_bits_mean\n";
    for (const auto& r : rows) {
        f << nets::to_string(r.kind) << "," << r.runs << "," << r.count << "," << num(r.dice.mean) << "," << num(r.dice.std)
          << "," << num(r.iou.mean) << "," << num(r.iou.std) << "," << num(r.miou) << "," << num(r.hausdorff_mm.mean) << ","
          << num(r.hausdorff_mm.std) << "," << num(r.hc_mm.mean) << "," << num(r.hc_mm.std) << ","
          << num(r.entropy_bits.mean) << "\n";
    }
    write_text(path, f.str());
}

std::string format_compare_table(const std::vector<CompareRow>& rows) {
    auto pm = [](const metrics::Aggregate& a, int prec) {
        if (a.count == 0) return std::string("-");
        std::ostringstream s;
        s << std::fixed << std::setprecision(prec) << a.mean << "±" << a.std;
        return s.str();
    };
    std::ostringstream t;
    t << std::left << std::setw(12) << "model" << std::setw(18) << "dice" << std::setw(10) << "miou" << std::setw(18)
      << "hausdorff_mm" << std::setw(18) << "hc_mm" << "entropy_bits\n";
    for (const auto& r : rows) {
        std::ostringstream miou;
        miou << std::fixed << std::setprecision(4) << r.miou;
        t << std::left << std::setw(12) << nets::to_string(r.kind) << std::setw(19) << pm(r.dice, 4) << std::setw(10)
          << miou.str() << std::setw(19) << pm(r.hausdorff_mm, 3) << std::setw(19) << pm(r.hc_mm, 2)
          << pm(r.entropy_bits, 4) << "\n";
    }
    return t.str();
}

int synth(pipeline::Task task, int n, int test, std::uint64_t seed, int size, const fs::path& out) {
    if (n < 1) throw Error("synth: n must be >= 1");
    if (test < 0 || test > n) throw Error("synth: test count must be in [0, n]");
    const auto samples = pipeline::generate_synthetic(task, n, seed, size);
    try {
        fs::create_directories(out);
    } catch (const fs::filesystem_error& e) {
        throw Error("synth: cannot create " + out.string() + ": " + e.code().message());
    }
    pipeline::write_synthetic_dataset(out, samples, task, test, seed);
    return n;
}

scattering::ScatteringOutput scatter_png(const fs::path& input, const scattering::ScatteringConfig& cfg, bool color,
                                         const fs::path& out) {
    Tensor img = pipeline::read_png(input);
    if (!color) img = pipeline::to_grayscale(img);
    scattering::ScatteringConfig c = cfg;
    c.height = img.h();
    c.width = img.w();
    c.validate();
    const auto res = scattering::scattering_transform(img, scattering::build_filter_bank(c));
    scattering::write_sct1(out, res);
    return res;
}

}  // namespace dunet::experiment
