#include "segfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace segfuse {

namespace {

constexpr char kMagic[8] = {'S', 'F', 'C', 'K', '0', '1', '\n', '\0'};

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

void put_f64_le(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64_le(out, bits);
}

double get_f64_le(const char* p) {
    const std::uint64_t bits = get_u64_le(p);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& topology,
                     const std::vector<NamedTensor>& params, std::uint64_t seed) {
    nlohmann::json header;
    header["topology"] = topology;
    header["seed"] = seed;
    nlohmann::json plist = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& p : params) {
        nlohmann::json entry;
        entry["name"] = p.name;
        entry["shape"] = p.tensor.shape();
        entry["offset"] = offset;
        entry["count"] = p.tensor.size();
        offset += static_cast<std::uint64_t>(p.tensor.size()) * 8;
        plist.push_back(entry);
    }
    header["params"] = plist;
    const std::string hjson = header.dump();

    std::string blob;
    blob.append(kMagic, 8);
    put_u64_le(blob, hjson.size());
    blob += hjson;
    for (const auto& p : params)
        for (double v : p.tensor.data()) put_f64_le(blob, v);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint64_t hlen = get_u64_le(blob.data() + 8);
    if (16 + hlen > blob.size()) throw IoError("truncated checkpoint header: " + path);
    const nlohmann::json header = nlohmann::json::parse(blob.substr(16, hlen));
    const char* payload = blob.data() + 16 + hlen;
    const std::uint64_t payload_size = blob.size() - 16 - hlen;

    Checkpoint ck;
    ck.topology = header.at("topology");
    ck.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& entry : header.at("params")) {
        const std::string name = entry.at("name");
        const Shape shape = entry.at("shape").get<Shape>();
        const std::uint64_t off = entry.at("offset");
        const std::uint64_t count = entry.at("count");
        if (off + count * 8 > payload_size)
            throw IoError("checkpoint payload out of range for " + name + ": " + path);
        std::vector<double> values(count);
        for (std::uint64_t i = 0; i < count; ++i) values[i] = get_f64_le(payload + off + i * 8);
        ck.params.emplace(name, Tensor::from_data(shape, std::move(values)));
    }
    return ck;
}

}  // namespace segfuse
