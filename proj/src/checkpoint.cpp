#include "dunet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace dunet {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'W', '1'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}

class Reader {
   public:
    explicit Reader(const std::vector<char>& b) : bytes_(b) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + k])) << (8 * k);
        }
        pos_ += 4;
        return v;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        }
    }
    bool done() const { return pos_ == bytes_.size(); }

   private:
    const std::vector<char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& params) {
    std::vector<char> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        put_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        for (int e : p.value.shape().extents()) put_u32(out, static_cast<std::uint32_t>(e));
        for (float f : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError("not an SGW1 checkpoint (bad magic)");
    }
    Reader r(bytes);
    r.text(4);
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> out;
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint32_t len = r.u32();
        std::string name = r.text(len);
        Shape s;
        s.n = static_cast<int>(r.u32());
        s.c = static_cast<int>(r.u32());
        s.h = static_cast<int>(r.u32());
        s.w = static_cast<int>(r.u32());
        if (!s.valid() || s.size() > (1u << 30)) {
            throw CheckpointError("checkpoint parameter '" + name + "' has invalid extents " + s.str());
        }
        r.need(4 * s.size());
        std::vector<float> data(s.size());
        for (auto& f : data) f = std::bit_cast<float>(r.u32());
        out.push_back({std::move(name), Tensor(s, std::move(data))});
    }
    if (!r.done()) {
        throw CheckpointError("checkpoint has trailing bytes");
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& params) {
    const auto bytes = encode_checkpoint(params);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

template <typename T>
std::vector<NamedTensor> snapshot_parameters(const BasicGraph<T>& g) {
    std::vector<NamedTensor> out;
    for (NodeId id : g.parameters()) {
        out.push_back({g.name(id), g.parameter_value(id).template cast<float>()});
    }
    return out;
}

template <typename T>
void restore_parameters(BasicGraph<T>& g, const std::vector<NamedTensor>& params) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& p : params) by_name[p.name] = &p.value;
    std::string problems;
    for (NodeId id : g.parameters()) {
        auto it = by_name.find(g.name(id));
        if (it == by_name.end()) {
            problems += " " + g.name(id) + " (missing)";
        } else if (it->second->shape() != g.parameter_value(id).shape()) {
            problems += " " + g.name(id) + " (checkpoint " + it->second->shape().str() + ", model " +
                        g.parameter_value(id).shape().str() + ")";
        }
    }
    if (!problems.empty()) {
        throw CheckpointError("incompatible checkpoint:" + problems);
    }
    for (NodeId id : g.parameters()) {
        g.parameter_value(id) = by_name.at(g.name(id))->template cast<T>();
    }
}

template std::vector<NamedTensor> snapshot_parameters<float>(const Graph&);
template std::vector<NamedTensor> snapshot_parameters<double>(const GraphD&);
template void restore_parameters<float>(Graph&, const std::vector<NamedTensor>&);
template void restore_parameters<double>(GraphD&, const std::vector<NamedTensor>&);

}  // namespace dunet
