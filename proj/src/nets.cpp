#include "dunet/nets.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "dunet/checkpoint.hpp"
#include "dunet/optim.hpp"

namespace dunet::nets {

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::unet: return "unet";
        case ModelKind::scunet: return "scunet";
        case ModelKind::latefusion: return "latefusion";
        case ModelKind::dunet: return "dunet";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
    for (auto k : {ModelKind::unet, ModelKind::scunet, ModelKind::latefusion, ModelKind::dunet}) {
        if (s == to_string(k)) return k;
    }
    throw Error("unknown model kind '" + s + "' (expected unet, scunet, latefusion or dunet)");
}

bool uses_image(ModelKind kind) { return kind != ModelKind::scunet; }
bool uses_sc(ModelKind kind) { return kind != ModelKind::unet; }

void ModelSpec::validate() const {
    if (depth < 1) throw Error("model: depth must be >= 1, got " + std::to_string(depth));
    if (base_channels < 1) throw Error("model: base_channels must be >= 1");
    if (uses_image(kind) && in_channels < 1) throw Error("model: in_channels must be >= 1");
    if (uses_sc(kind) && sc_channels < 1) throw Error("model: " + to_string(kind) + " needs sc_channels >= 1");
    const int step = 1 << depth;
    if (height < 1 || width < 1 || height % step != 0 || width % step != 0) {
        throw Error("model: input " + std::to_string(height) + "x" + std::to_string(width) +
                    " is not divisible by 2^depth = " + std::to_string(step));
    }
}

void check_pairing(const ModelSpec& spec, const scattering::ScatteringConfig& cfg) {
    if (!uses_sc(spec.kind)) return;
    const int expected = scattering::count_paths(cfg) * spec.in_channels;
    if (spec.sc_channels != expected) {
        throw Error("model: sc_channels = " + std::to_string(spec.sc_channels) + " but the scattering setup (J=" +
                    std::to_string(cfg.J) + ", L=" + std::to_string(cfg.L) + ", order=" + std::to_string(cfg.order) +
                    ", " + std::to_string(spec.in_channels) + " input channels) yields " + std::to_string(expected));
    }
    if (spec.depth != cfg.J) {
        throw Error("model: depth " + std::to_string(spec.depth) + " != scattering J " + std::to_string(cfg.J) +
                    "; SC maps (H/2^J) would not match the encoder bottleneck (H/2^depth)");
    }
    if (spec.height != cfg.height || spec.width != cfg.width) {
        throw Error("model: input size does not match the scattering input size");
    }
}

namespace {

struct Builder {
    Graph& g;

    NodeId conv(const std::string& name, NodeId x, int cin, int cout, int k) {
        const NodeId w = g.parameter(name + ".w", Shape{cout, cin, k, k});
        const NodeId b = g.parameter(name + ".b", Shape{cout, 1, 1, 1});
        return g.conv2d(x, w, b);
    }
    NodeId conv_relu(const std::string& name, NodeId x, int cin, int cout) { return g.relu(conv(name, x, cin, cout, 3)); }
    NodeId up(const std::string& name, NodeId x, int cin, int cout) {
        const NodeId w = g.parameter(name + ".w", Shape{cin, cout, 2, 2});
        const NodeId b = g.parameter(name + ".b", Shape{cout, 1, 1, 1});
        return g.upsample2x(x, w, b);
    }
};

struct Features {
    NodeId x;
    int channels;
    std::vector<NodeId> skips;
};

Features image_encoder(Builder& B, NodeId image, const ModelSpec& s) {
    Features f{image, s.in_channels, {}};
    for (int l = 0; l < s.depth; ++l) {
        const int w = s.base_channels << l;
        const std::string p = "enc" + std::to_string(l);
        f.x = B.conv_relu(p + ".conv1", f.x, f.channels, w);
        f.x = B.conv_relu(p + ".conv2", f.x, w, w);
        f.skips.push_back(f.x);
        f.x = B.g.max_pool(f.x);
        f.channels = w;
    }
    const int w = s.base_channels << s.depth;
    f.x = B.conv_relu("bottleneck.conv1", f.x, f.channels, w);
    f.x = B.conv_relu("bottleneck.conv2", f.x, w, w);
    f.channels = w;
    return f;
}

// SC maps already sit at bottleneck resolution: a 1x1 reduction to the
// bottleneck width followed by a 3x3 conv.
Features sc_encoder(Builder& B, NodeId sc, const ModelSpec& s) {
    const int w = s.base_channels << s.depth;
    NodeId x = B.g.relu(B.conv("sc_enc.reduce", sc, s.sc_channels, w, 1));
    x = B.conv_relu("sc_enc.conv1", x, w, w);
    return {x, w, {}};
}

NodeId decoder(Builder& B, const std::string& prefix, Features f, const ModelSpec& s, const std::vector<NodeId>* skips) {
    for (int l = s.depth - 1; l >= 0; --l) {
        const int w = s.base_channels << l;
        const std::string p = prefix + std::to_string(l);
        NodeId x = B.up(p + ".up", f.x, f.channels, w);
        int cin = w;
        if (skips) {
            x = B.g.concat(x, (*skips)[static_cast<std::size_t>(l)]);
            cin += w;
        }
        x = B.conv_relu(p + ".conv1", x, cin, w);
        f.x = B.conv_relu(p + ".conv2", x, w, w);
        f.channels = w;
    }
    return f.x;
}

Model start(const ModelSpec& spec, ModelKind expected) {
    if (spec.kind != expected) {
        throw Error("model: builder for " + to_string(expected) + " called with kind " + to_string(spec.kind));
    }
    spec.validate();
    Model m;
    m.spec = spec;
    if (uses_image(spec.kind)) m.image = m.graph.input("image");
    if (uses_sc(spec.kind)) m.sc = m.graph.input("sc");
    m.target = m.graph.input("target");
    return m;
}

void finish(Model& m, Builder& B, NodeId features, int channels, const std::string& head) {
    m.prob = m.graph.sigmoid(B.conv(head, features, channels, 1, 1));
    m.graph.mark_output(m.prob);
}

}  // namespace

Model build_unet(const ModelSpec& spec) {
    Model m = start(spec, ModelKind::unet);
    Builder B{m.graph};
    const Features enc = image_encoder(B, m.image, spec);
    finish(m, B, decoder(B, "dec", enc, spec, &enc.skips), spec.base_channels, "head");
    return m;
}

Model build_scunet(const ModelSpec& spec) {
    Model m = start(spec, ModelKind::scunet);
    Builder B{m.graph};
    finish(m, B, decoder(B, "sc_dec", sc_encoder(B, m.sc, spec), spec, nullptr), spec.base_channels, "head");
    return m;
}

Model build_latefusion(const ModelSpec& spec) {
    Model m = start(spec, ModelKind::latefusion);
    Builder B{m.graph};
    const Features enc = image_encoder(B, m.image, spec);
    const NodeId img = decoder(B, "dec", enc, spec, &enc.skips);
    const NodeId sc = decoder(B, "sc_dec", sc_encoder(B, m.sc, spec), spec, nullptr);
    finish(m, B, m.graph.concat(img, sc), 2 * spec.base_channels, "fuse");
    return m;
}

Model build_dunet(const ModelSpec& spec) {
    Model m = start(spec, ModelKind::dunet);
    Builder B{m.graph};
    Features enc = image_encoder(B, m.image, spec);
    const Features sc = sc_encoder(B, m.sc, spec);
    enc.x = m.graph.concat(enc.x, sc.x);
    enc.channels += sc.channels;
    finish(m, B, decoder(B, "dec", enc, spec, &enc.skips), spec.base_channels, "head");
    return m;
}

Model build_model(const ModelSpec& spec) {
    switch (spec.kind) {
        case ModelKind::unet: return build_unet(spec);
        case ModelKind::scunet: return build_scunet(spec);
        case ModelKind::latefusion: return build_latefusion(spec);
        case ModelKind::dunet: return build_dunet(spec);
    }
    throw Error("model: bad kind");
}

void init_parameters(Model& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto& g = model.graph;
    for (NodeId id : g.parameters()) {
        Tensor& t = g.parameter_value(id);
        const std::string& name = g.name(id);
        if (name.ends_with(".b")) {
            t.fill(0.0f);
            continue;
        }
        // conv weights are out x in x k x k; upsampling weights are in x out x 2 x 2
        const bool upsample = name.ends_with(".up.w");
        const int fan_in = upsample ? t.n() : t.c() * t.h() * t.w();
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& v : t.data()) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            v = static_cast<float>((2.0 * u - 1.0) * bound);
        }
    }
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("train: lr must be > 0");
    if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (epochs < 1 && !(epochs == 0 && warm_start)) {
        throw Error("train: epochs must be >= 1 (0 is only allowed with a warm start)");
    }
}

namespace {

Tensor gather(const Tensor& src, const std::vector<int>& idx, std::size_t from, std::size_t to) {
    const std::size_t per = src.shape().plane() * static_cast<std::size_t>(src.c());
    std::vector<float> out;
    out.reserve(per * (to - from));
    for (std::size_t k = from; k < to; ++k) {
        const auto begin = src.data().begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(idx[k]));
        out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(per));
    }
    Shape s = src.shape();
    s.n = static_cast<int>(to - from);
    return Tensor(s, std::move(out));
}

void check_data(const Model& m, const TrainData& d) {
    if (d.size() < 1) throw Error("train: dataset is empty");
    const auto& s = m.spec;
    const Shape mask{d.size(), 1, s.height, s.width};
    if (d.masks.shape() != mask) throw ShapeError("train: masks " + d.masks.shape().str() + ", expected " + mask.str());
    if (uses_image(s.kind)) {
        const Shape img{d.size(), s.in_channels, s.height, s.width};
        if (d.images.shape() != img) throw ShapeError("train: images " + d.images.shape().str() + ", expected " + img.str());
    }
    if (uses_sc(s.kind)) {
        const Shape sc{d.size(), s.sc_channels, s.height >> s.depth, s.width >> s.depth};
        if (d.sc.shape() != sc) throw ShapeError("train: sc " + d.sc.shape().str() + ", expected " + sc.str());
    }
}

}  // namespace

TrainResult train(Model& model, const TrainData& data, const TrainConfig& cfg, const EpochHook& hook) {
    cfg.validate();
    check_data(model, data);
    if (cfg.warm_start) {
        restore_parameters(model.graph, read_checkpoint(*cfg.warm_start));
    } else {
        init_parameters(model, cfg.seed);
    }
    auto& g = model.graph;
    const NodeId loss = g.loss(model.prob, model.target, cfg.loss);
    Adam<float> opt(AdamConfig{.lr = cfg.lr});
    std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);

    const int n = data.size();
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    TrainResult res;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rng() % static_cast<std::uint64_t>(i + 1)]);
        double total = 0;
        for (int from = 0; from < n; from += cfg.batch_size) {
            const auto lo = static_cast<std::size_t>(from);
            const auto hi = static_cast<std::size_t>(std::min(n, from + cfg.batch_size));
            if (model.image.valid()) g.set_input("image", gather(data.images, order, lo, hi));
            if (model.sc.valid()) g.set_input("sc", gather(data.sc, order, lo, hi));
            g.set_input("target", gather(data.masks, order, lo, hi));
            g.forward(loss);
            const double v = g.value(loss)[0];
            if (!std::isfinite(v)) {
                std::string ids;
                for (std::size_t k = lo; k < hi; ++k) ids += (ids.empty() ? "" : ",") + std::to_string(order[k]);
                std::string bad;
                for (NodeId p : g.parameters())
                    if (!g.parameter_value(p).all_finite()) bad += " " + g.name(p);
                throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) + ", samples [" + ids +
                                    "], lr " + std::to_string(cfg.lr) +
                                    (bad.empty() ? "; parameters finite" : "; non-finite parameters:" + bad));
            }
            g.backward(loss);
            opt.step(g);
            total += v * static_cast<double>(hi - lo);
        }
        res.epoch_loss.push_back(total / n);
        if (hook && !hook(epoch, res.epoch_loss.back(), model)) {
            res.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    return res;
}

Tensor infer(Model& model, const Tensor& images, const Tensor* sc) {
    auto& g = model.graph;
    const bool need_sc = model.sc.valid();
    if (need_sc && (!sc || sc->size() == 0)) {
        throw Error("infer: " + to_string(model.spec.kind) + " needs scattering coefficients");
    }
    const int n = model.image.valid() ? images.n() : sc->n();
    if (need_sc && model.image.valid() && sc->n() != n) {
        throw ShapeError("infer: " + std::to_string(n) + " images but " + std::to_string(sc->n()) + " SC maps");
    }
    std::vector<Tensor> out;
    for (int i = 0; i < n; ++i) {
        if (model.image.valid()) g.set_input("image", images.sample(i));
        if (need_sc) g.set_input("sc", sc->sample(i));
        g.forward(model.prob);
        out.push_back(g.value(model.prob));
    }
    return stack_batch(out);
}

double mean_entropy(const Tensor& prob) {
    double s = 0;
    for (float f : prob.data()) {
        const double p = f;
        if (p > 0.0 && p < 1.0) s -= p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p);
    }
    return prob.size() ? s / static_cast<double>(prob.size()) : 0.0;
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result, std::uint64_t seed) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f << "# seed=" << seed << "\n" << "epoch,loss\n";
    f.precision(9);
    for (std::size_t i = 0; i < result.epoch_loss.size(); ++i) f << i + 1 << "," << result.epoch_loss[i] << "\n";
}

}  // namespace dunet::nets
