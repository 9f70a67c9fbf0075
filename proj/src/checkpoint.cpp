#include "sfcn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sfcn {

namespace {

constexpr char kMagic[8] = {'S', 'F', 'C', 'N', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));  // host is little-endian; struct kept explicit for readers
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Parameters& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_le<std::uint32_t>(out, kVersion);
    const ModelConfig& c = params.config;
    write_le<std::int32_t>(out, c.image_height);
    write_le<std::int32_t>(out, c.image_width);
    write_le<std::int32_t>(out, c.base_channels);
    write_le<std::int32_t>(out, c.blocks_per_module);
    write_le<std::int32_t>(out, c.num_categories);
    write_le<std::uint8_t>(out, c.arch == Arch::sibling ? 0 : 1);
    write_le<std::uint64_t>(out, params.items.size());
    for (const auto& [name, t] : params.items) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d)
            write_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.dim(d)));
        for (Eigen::Index i = 0; i < t.size(); ++i) write_le<double>(out, t.value()[i]);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Parameters load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    if (read_le<std::uint32_t>(in) != kVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);

    Parameters p;
    p.config.image_height = read_le<std::int32_t>(in);
    p.config.image_width = read_le<std::int32_t>(in);
    p.config.base_channels = read_le<std::int32_t>(in);
    p.config.blocks_per_module = read_le<std::int32_t>(in);
    p.config.num_categories = read_le<std::int32_t>(in);
    p.config.arch = read_le<std::uint8_t>(in) == 0 ? Arch::sibling : Arch::fcn5cls;

    const std::uint64_t count = read_le<std::uint64_t>(in);
    for (std::uint64_t r = 0; r < count; ++r) {
        const std::uint32_t name_len = read_le<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = read_le<std::uint32_t>(in);
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<int>(read_le<std::uint64_t>(in)));
        Tensor t(shape);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.value()[i] = read_le<double>(in);
        p.items[name] = t;
    }
    return p;
}

void check_config_compatible(const ModelConfig& checkpoint, const ModelConfig& expected) {
    auto desc = [](const ModelConfig& c) {
        return "(image " + std::to_string(c.image_height) + "x" + std::to_string(c.image_width) +
               ", base " + std::to_string(c.base_channels) + ", blocks " +
               std::to_string(c.blocks_per_module) + ", K " + std::to_string(c.num_categories) +
               ", arch " + arch_name(c.arch) + ")";
    };
    ModelConfig exp = expected;
    exp.arch = checkpoint.arch;  // the regime decides the arch, not the eval config
    if (!(checkpoint == exp))
        throw std::runtime_error("checkpoint/config shape mismatch: checkpoint " +
                                 desc(checkpoint) + " vs configured " + desc(expected));
}

}  // namespace sfcn
