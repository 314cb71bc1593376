// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (all integers little-endian):
//
//   magic        8 bytes  "TTHNCKPT"
//   version      u32      kCheckpointVersion
//   header_len   u64
//   header       header_len bytes of JSON text:
//                  {"config": {...}, "step": u64, "rng_state": "<mt19937_64 state>",
//                   "tensor_count": u64}
//   tensor_count records, in parameter order:
//     name_len   u32, then name bytes (UTF-8)
//     rank       u32, then rank x u64 extents
//     values     product(extents) x IEEE-754 binary64
#include "thinner/errors.hpp"
#include "thinner/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace thinner {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'T', 'H', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    std::array<unsigned char, sizeof(T)> bytes;
    if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
        throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

} // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ostringstream rng_state;
    rng_state << model.rng();
    nlohmann::json header = {
        {"config", model.config()},
        {"step", model.step()},
        {"rng_state", rng_state.str()},
        {"tensor_count", model.parameters().size()},
    };
    const std::string header_text = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kMagic.data(), kMagic.size());
    write_le<std::uint32_t>(os, kCheckpointVersion);
    write_le<std::uint64_t>(os, header_text.size());
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : model.parameters()) {
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t extent : t.shape()) write_le<std::uint64_t>(os, extent);
        for (double v : t.data()) write_le<double>(os, v);
    }
    if (!os) throw FormatError("checkpoint: write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint: cannot open " + path.string());
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
        throw FormatError("checkpoint: bad magic in " + path.string());
    }
    const auto version = read_le<std::uint32_t>(is, "version");
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = read_le<std::uint64_t>(is, "header length");
    if (header_len > (std::uint64_t{1} << 24)) throw FormatError("checkpoint: implausible header length");
    std::string header_text(header_len, '\0');
    if (!is.read(header_text.data(), static_cast<std::streamsize>(header_len))) {
        throw FormatError("checkpoint: truncated header");
    }

    nlohmann::json header;
    ModelConfig config;
    std::uint64_t step = 0;
    std::string rng_text;
    std::uint64_t count = 0;
    try {
        header = nlohmann::json::parse(header_text);
        config = header.at("config").get<ModelConfig>();
        step = header.at("step").get<std::uint64_t>();
        rng_text = header.at("rng_state").get<std::string>();
        count = header.at("tensor_count").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }

    // A freshly built model supplies the expected names and shapes.
    Model model = Model::build(config, 0);
    std::map<std::string, Tensor> expected(model.params_.begin(), model.params_.end());
    if (count != expected.size()) {
        throw FormatError("checkpoint: " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(expected.size()));
    }
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto name_len = read_le<std::uint32_t>(is, "tensor name length");
        if (name_len > 4096) throw FormatError("checkpoint: implausible tensor name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw FormatError("checkpoint: truncated tensor name");
        auto it = expected.find(name);
        if (it == expected.end()) throw FormatError("checkpoint: unexpected tensor '" + name + "'");
        const auto rank = read_le<std::uint32_t>(is, "tensor rank");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_le<std::uint64_t>(is, "tensor extent"));
        if (shape != it->second.shape()) {
            throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                              ", expected " + shape_str(it->second.shape()));
        }
        auto dst = it->second.mutable_data();
        for (auto& v : dst) v = read_le<double>(is, "tensor values");
        expected.erase(it);
    }
    if (!expected.empty()) throw FormatError("checkpoint: missing tensor '" + expected.begin()->first + "'");
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");

    std::istringstream rng_in(rng_text);
    rng_in >> model.rng_;
    if (rng_in.fail()) throw FormatError("checkpoint: bad generator state");
    model.step_ = step;
    return model;
}

} // namespace thinner
