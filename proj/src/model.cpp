#include "sfcn/model.hpp"

#include <stdexcept>

#include "sfcn/init.hpp"

namespace sfcn {

std::string arch_name(Arch arch) { return arch == Arch::sibling ? "sibling" : "fcn5cls"; }

Arch arch_from_name(const std::string& name) {
    if (name == "sibling") return Arch::sibling;
    if (name == "fcn5cls") return Arch::fcn5cls;
    throw std::invalid_argument("unknown architecture: " + name);
}

ModelConfig ModelConfig::full_preset() {
    ModelConfig c;
    c.image_height = 64;
    c.image_width = 64;
    c.base_channels = 32;
    c.blocks_per_module = 9;
    c.num_categories = 4;
    return c;
}

ModelConfig ModelConfig::desk_preset() {
    ModelConfig c;
    c.image_height = 32;
    c.image_width = 32;
    c.base_channels = 8;
    c.blocks_per_module = 2;
    c.num_categories = 4;
    return c;
}

void ModelConfig::validate() const {
    if (image_height % 4 != 0 || image_width % 4 != 0)
        throw std::invalid_argument("model: image dimensions must be divisible by 4");
    if (image_height < 4 || image_width < 4)
        throw std::invalid_argument("model: image dimensions too small");
    if (num_categories < 1) throw std::invalid_argument("model: num_categories must be >= 1");
    if (blocks_per_module < 1)
        throw std::invalid_argument("model: blocks_per_module must be >= 1");
    if (base_channels < 1) throw std::invalid_argument("model: base_channels must be >= 1");
}

Tensor& Parameters::at(const std::string& name) {
    auto it = items.find(name);
    if (it == items.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

const Tensor& Parameters::at(const std::string& name) const {
    auto it = items.find(name);
    if (it == items.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

bool Parameters::is_running_stat(const std::string& name) {
    return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

bool Parameters::is_bias_like(const std::string& name) {
    return name.ends_with(".bias") || name.ends_with(".scale") || name.ends_with(".shift");
}

bool Parameters::is_decayed(const std::string& name) { return name.ends_with(".weight"); }

std::vector<std::string> Parameters::learnable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, t] : items)
        if (!is_running_stat(name)) out.push_back(name);
    return out;
}

std::int64_t Parameters::learnable_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items)
        if (!is_running_stat(name)) n += t.size();
    return n;
}

bool name_is_frozen(const std::string& name, const std::vector<std::string>* prefixes) {
    if (!prefixes) return false;
    for (const auto& p : *prefixes)
        if (name.rfind(p, 0) == 0) return true;
    return false;
}

namespace {

void add_conv(Parameters& p, Rng& rng, const std::string& prefix, int co, int ci, int k) {
    p.items[prefix + ".weight"] = xavier_init({co, ci, k, k}, rng);
    p.items[prefix + ".bias"] = Tensor::zeros({co});
}

void add_deconv(Parameters& p, Rng& rng, const std::string& prefix, int ci, int co, int k) {
    p.items[prefix + ".weight"] = xavier_init({ci, co, k, k}, rng);
}

void add_bn(Parameters& p, const std::string& prefix, int c) {
    p.items[prefix + ".scale"] = Tensor::full({c}, 1.0);
    p.items[prefix + ".shift"] = Tensor::zeros({c});
    p.items[prefix + ".running_mean"] = Tensor::zeros({c});
    p.items[prefix + ".running_var"] = Tensor::full({c}, 1.0);
}

void add_block(Parameters& p, Rng& rng, const std::string& prefix, int ci, int co,
               bool downsample) {
    add_conv(p, rng, prefix + ".conv1", co, ci, 3);
    add_bn(p, prefix + ".bn1", co);
    add_conv(p, rng, prefix + ".conv2", co, co, 3);
    add_bn(p, prefix + ".bn2", co);
    if (downsample) add_conv(p, rng, prefix + ".proj", co, ci, 1);
}

struct ModuleSpec {
    std::string name;
    int in_ch;
    int out_ch;
    bool downsample;  // on the first block
};

std::vector<ModuleSpec> module_table(const ModelConfig& c) {
    const int b = c.base_channels;
    return {{"m1", b, b, false}, {"m2", b, 2 * b, true}, {"m3", 2 * b, 4 * b, true},
            {"m4", 4 * b, 4 * b, false}};
}

}  // namespace

Parameters build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Parameters p;
    p.config = config;
    Rng rng(derive_seed(seed, seed_stream::init));

    const int b = config.base_channels;
    const int kk = config.num_categories + 1;

    add_conv(p, rng, "trunk.conv", b, 3, 3);
    add_bn(p, "trunk.bn", b);

    for (const auto& mod : module_table(config)) {
        for (int i = 0; i < config.blocks_per_module; ++i) {
            const bool down = mod.downsample && i == 0;
            const int ci = i == 0 ? mod.in_ch : mod.out_ch;
            add_block(p, rng, mod.name + ".b" + std::to_string(i), ci, mod.out_ch, down);
        }
    }

    if (config.arch == Arch::sibling) {
        add_conv(p, rng, "det.head", 2, 4 * b, 1);
        add_deconv(p, rng, "det.up1", 2, 2, 4);
        add_conv(p, rng, "det.fuse_proj", 2, 2 * b, 1);
        add_deconv(p, rng, "det.up2", 2, 2, 4);
    }
    add_conv(p, rng, "cls.head", kk, 4 * b, 1);
    add_deconv(p, rng, "cls.up", kk, kk, 8);
    return p;
}

namespace {

Tensor bn_layer(Tape& tape, Parameters& params, const std::string& prefix, const Tensor& x,
                const ForwardOptions& opts) {
    const bool train = opts.train && !name_is_frozen(prefix, opts.frozen_prefixes);
    return ops::batch_norm(tape, x, params.at(prefix + ".scale"), params.at(prefix + ".shift"),
                           params.at(prefix + ".running_mean"), params.at(prefix + ".running_var"),
                           train);
}

Tensor conv_layer(Tape& tape, const Parameters& params, const std::string& prefix,
                  const Tensor& x, int stride) {
    const Tensor& w = params.at(prefix + ".weight");
    return ops::conv2d(tape, x, w, params.at(prefix + ".bias"), stride, w.dim(2) / 2);
}

}  // namespace

Tensor residual_block(Tape& tape, Parameters& params, const std::string& prefix,
                      const Tensor& x, bool downsample, const ForwardOptions& opts) {
    Tensor f = conv_layer(tape, params, prefix + ".conv1", x, downsample ? 2 : 1);
    f = bn_layer(tape, params, prefix + ".bn1", f, opts);
    f = ops::relu(tape, f);
    f = conv_layer(tape, params, prefix + ".conv2", f, 1);
    f = bn_layer(tape, params, prefix + ".bn2", f, opts);
    Tensor skip = downsample ? conv_layer(tape, params, prefix + ".proj", x, 2) : x;
    return ops::relu(tape, ops::add(tape, f, skip));
}

Tensor fuse_detection(Tape& tape, const Parameters& params, const Tensor& m3_head,
                      const Tensor& m2_features) {
    Tensor up = ops::conv2d_transpose(tape, m3_head, params.at("det.up1.weight"), 2);
    Tensor proj = conv_layer(tape, params, "det.fuse_proj", m2_features, 1);
    return ops::add(tape, up, proj);
}

ForwardOutputs forward(Tape& tape, Parameters& params, const Tensor& image,
                       const ForwardOptions& opts) {
    const ModelConfig& c = params.config;
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != c.image_height ||
        image.dim(2) != c.image_width)
        throw std::invalid_argument("forward: image shape " + shape_to_string(image.shape()) +
                                    " does not match configured [3," +
                                    std::to_string(c.image_height) + "," +
                                    std::to_string(c.image_width) + "]");

    Tensor t = conv_layer(tape, params, "trunk.conv", image, 1);
    t = bn_layer(tape, params, "trunk.bn", t, opts);
    t = ops::relu(tape, t);

    std::map<std::string, Tensor> module_out;
    Tensor x = t;
    for (const auto& mod : module_table(c)) {
        if (mod.name == "m4") break;  // classification-branch module, handled below
        for (int i = 0; i < c.blocks_per_module; ++i)
            x = residual_block(tape, params, mod.name + ".b" + std::to_string(i), x,
                               mod.downsample && i == 0, opts);
        module_out[mod.name] = x;
    }
    const Tensor& m2_out = module_out.at("m2");
    const Tensor& m3_out = module_out.at("m3");

    ForwardOutputs out;

    // classification branch: one more residual module, 1x1 head, x4 deconv
    Tensor m4 = m3_out;
    for (int i = 0; i < c.blocks_per_module; ++i)
        m4 = residual_block(tape, params, "m4.b" + std::to_string(i), m4, false, opts);
    Tensor cls = conv_layer(tape, params, "cls.head", m4, 1);
    cls = ops::conv2d_transpose(tape, cls, params.at("cls.up.weight"), 4);
    out.cls_cond_probs = ops::softmax_channels(tape, cls);

    if (c.arch == Arch::sibling) {
        Tensor head = conv_layer(tape, params, "det.head", m3_out, 1);
        Tensor fused = fuse_detection(tape, params, head, m2_out);
        Tensor det = ops::conv2d_transpose(tape, fused, params.at("det.up2.weight"), 2);
        out.det_probs = ops::softmax_channels(tape, det);
    } else {
        // FCN-5CLS: detection map derived by summing the category probability
        // maps; values only, the training loss never reads det_probs.
        const Eigen::Index m =
            static_cast<Eigen::Index>(c.image_height) * c.image_width;
        Tensor det({2, c.image_height, c.image_width});
        det.value().segment(0, m) = out.cls_cond_probs.value().segment(0, m);
        det.value().segment(m, m).setZero();
        for (int k = 1; k <= c.num_categories; ++k)
            det.value().segment(m, m) += out.cls_cond_probs.value().segment(k * m, m);
        out.det_probs = det;
    }
    return out;
}

int conv_layer_count(const ModelConfig& config) {
    const int blocks = config.blocks_per_module;
    if (config.arch == Arch::fcn5cls) return 8 * blocks + 5;  // no detection branch
    // trunk + 4 modules * blocks * 2 convs + 2 skip projections
    // + det head + fusion projection + 2 det deconvs + cls head + cls deconv
    return 1 + 8 * blocks + 2 + 6;
}

std::int64_t closed_form_param_count(const ModelConfig& config) {
    const std::int64_t b = config.base_channels;
    const std::int64_t kk = config.num_categories + 1;
    const std::int64_t blocks = config.blocks_per_module;

    auto conv = [](std::int64_t co, std::int64_t ci, std::int64_t k) { return co * ci * k * k + co; };
    auto bn = [](std::int64_t c) { return 2 * c; };
    auto block = [&](std::int64_t ci, std::int64_t co, bool down) {
        std::int64_t n = conv(co, ci, 3) + bn(co) + conv(co, co, 3) + bn(co);
        if (down) n += conv(co, ci, 1);
        return n;
    };
    auto module = [&](std::int64_t ci, std::int64_t co, bool down) {
        std::int64_t n = block(ci, co, down);
        for (std::int64_t i = 1; i < blocks; ++i) n += block(co, co, false);
        return n;
    };

    std::int64_t total = conv(b, 3, 3) + bn(b);
    total += module(b, b, false) + module(b, 2 * b, true) + module(2 * b, 4 * b, true) +
             module(4 * b, 4 * b, false);
    if (config.arch == Arch::sibling) {
        total += conv(2, 4 * b, 1);  // det.head
        total += 2 * 2 * 4 * 4;      // det.up1 (no bias)
        total += conv(2, 2 * b, 1);  // det.fuse_proj
        total += 2 * 2 * 4 * 4;      // det.up2
    }
    total += conv(kk, 4 * b, 1);  // cls.head
    total += kk * kk * 8 * 8;     // cls.up
    return total;
}

}  // namespace sfcn
