#include "corefusion/checkpoint.hpp"

#include "corefusion/error.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace corefusion {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'R', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kDigestSize = 32;

using json = nlohmann::json;

std::array<unsigned char, kDigestSize> sha256(const unsigned char* data, std::size_t size)
{
    std::array<unsigned char, kDigestSize> digest{};
    unsigned int len = 0;
    require(EVP_Digest(data, size, digest.data(), &len, EVP_sha256(), nullptr) == 1 && len == kDigestSize,
            ErrorCode::io, "sha256 computation failed");
    return digest;
}

std::string hex(const unsigned char* data, std::size_t size)
{
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (std::size_t i = 0; i < size; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xf]);
    }
    return out;
}

json config_json(const ModelConfig& c)
{
    return json{{"depth", c.depth},
                {"widths", c.widths},
                {"thermal_in_channels", c.thermal_in_channels},
                {"rgb_in_channels", c.rgb_in_channels},
                {"blocks_per_level", c.blocks_per_level},
                {"projection_dim", c.projection_dim},
                {"temperature", c.temperature},
                {"output_activation", to_string(c.output_activation)},
                {"seed", c.seed},
                {"norm_groups", c.norm_groups},
                {"norm_affine", c.norm_affine}};
}

ModelConfig config_from(const json& j)
{
    ModelConfig c;
    c.depth = j.at("depth").get<int>();
    c.widths = j.at("widths").get<std::vector<int>>();
    c.thermal_in_channels = j.at("thermal_in_channels").get<int>();
    c.rgb_in_channels = j.at("rgb_in_channels").get<int>();
    c.blocks_per_level = j.at("blocks_per_level").get<int>();
    c.projection_dim = j.at("projection_dim").get<int>();
    c.temperature = j.at("temperature").get<double>();
    c.output_activation = parse_output_activation(j.at("output_activation").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.norm_affine = j.at("norm_affine").get<bool>();
    return c;
}

template <typename T>
void put(std::vector<unsigned char>& buf, const T& v)
{
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<unsigned char>& buf, std::size_t& pos, const std::string& path)
{
    require(pos + sizeof(T) <= buf.size(), ErrorCode::malformed_file, "truncated checkpoint " + path);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::vector<unsigned char> read_all(const std::filesystem::path& path)
{
    require(std::filesystem::exists(path), ErrorCode::missing_file, "missing file " + path.string());
    std::ifstream in(path, std::ios::binary);
    require(bool(in), ErrorCode::io, "cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

} // namespace

std::string model_config_to_json(const ModelConfig& config)
{
    return config_json(config).dump();
}

ModelConfig model_config_from_json(const std::string& text)
{
    try {
        return config_from(json::parse(text));
    } catch (const json::exception& e) {
        fail(ErrorCode::malformed_file, std::string("malformed model config: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Parameters& params)
{
    json header;
    header["schema_version"] = kCheckpointSchemaVersion;
    header["config"] = config_json(params.config);
    json table = json::array();
    for (const auto* group : {&params.params, &params.buffers}) {
        const char* kind = group == &params.params ? "param" : "buffer";
        for (const auto& t : *group) {
            const Shape4& s = t.value.shape();
            table.push_back({{"name", t.name}, {"owner", to_string(t.owner)}, {"kind", kind},
                             {"shape", {s.n, s.c, s.h, s.w}}});
        }
    }
    header["tensors"] = table;
    const std::string header_text = header.dump();

    std::vector<unsigned char> buf(std::begin(kMagic), std::end(kMagic));
    put(buf, std::uint32_t(kCheckpointSchemaVersion));
    put(buf, std::uint64_t(header_text.size()));
    buf.insert(buf.end(), header_text.begin(), header_text.end());
    for (const auto* group : {&params.params, &params.buffers})
        for (const auto& t : *group) {
            const auto* p = reinterpret_cast<const unsigned char*>(t.value.data());
            buf.insert(buf.end(), p, p + t.value.size() * sizeof(double));
        }
    const auto digest = sha256(buf.data(), buf.size());
    buf.insert(buf.end(), digest.begin(), digest.end());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(bool(out), ErrorCode::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    require(bool(out), ErrorCode::io, "short write to " + path.string());
}

Parameters load_checkpoint(const std::filesystem::path& path)
{
    const std::string where = path.string();
    std::vector<unsigned char> buf = read_all(path);
    require(buf.size() >= sizeof kMagic + kDigestSize && std::memcmp(buf.data(), kMagic, sizeof kMagic) == 0,
            ErrorCode::malformed_file, "not a checkpoint file: " + where);
    const std::size_t body = buf.size() - kDigestSize;
    const auto digest = sha256(buf.data(), body);
    require(std::memcmp(digest.data(), buf.data() + body, kDigestSize) == 0, ErrorCode::checksum_mismatch,
            "checkpoint checksum mismatch in " + where);

    std::size_t pos = sizeof kMagic;
    const auto version = get<std::uint32_t>(buf, pos, where);
    require(version == kCheckpointSchemaVersion, ErrorCode::malformed_file,
            "unsupported checkpoint schema version " + std::to_string(version));
    const auto header_len = get<std::uint64_t>(buf, pos, where);
    require(pos + header_len <= body, ErrorCode::malformed_file, "truncated checkpoint header in " + where);
    const std::string header_text(reinterpret_cast<const char*>(buf.data() + pos), std::size_t(header_len));
    pos += std::size_t(header_len);

    try {
        const json header = json::parse(header_text);
        Parameters params;
        params.config = config_from(header.at("config"));
        try {
            params.config.validate();
        } catch (const Error& e) {
            fail(ErrorCode::malformed_file, "invalid model config in " + where + ": " + e.what());
        }
        for (const auto& entry : header.at("tensors")) {
            const auto dims = entry.at("shape").get<std::vector<int>>();
            require(dims.size() == 4, ErrorCode::malformed_file, "tensor shape must have 4 dimensions");
            Shape4 s{dims[0], dims[1], dims[2], dims[3]};
            const std::size_t bytes = s.size() * sizeof(double);
            require(pos + bytes <= body, ErrorCode::malformed_file, "truncated checkpoint payload in " + where);
            std::vector<double> values(s.size());
            std::memcpy(values.data(), buf.data() + pos, bytes);
            pos += bytes;
            const std::string kind = entry.at("kind").get<std::string>();
            const Submodule owner = parse_submodule(entry.at("owner").get<std::string>());
            Tensor t(s, std::move(values));
            if (kind == "param")
                params.add_param(entry.at("name").get<std::string>(), owner, std::move(t));
            else if (kind == "buffer")
                params.add_buffer(entry.at("name").get<std::string>(), owner, std::move(t));
            else
                fail(ErrorCode::malformed_file, "unknown tensor kind '" + kind + "'");
        }
        require(pos == body, ErrorCode::malformed_file, "trailing bytes in checkpoint " + where);

        // The stored tensor table must describe exactly the configured architecture.
        const Parameters expected = init_parameters(params.config);
        require(expected.params.size() == params.params.size() && expected.buffers.size() == params.buffers.size(),
                ErrorCode::malformed_file, "checkpoint tensors do not match its model config");
        for (std::size_t i = 0; i < expected.params.size(); ++i)
            require(expected.params[i].name == params.params[i].name &&
                        expected.params[i].value.shape() == params.params[i].value.shape(),
                    ErrorCode::malformed_file, "checkpoint tensor " + params.params[i].name + " does not match config");
        return params;
    } catch (const json::exception& e) {
        fail(ErrorCode::malformed_file, "malformed checkpoint header in " + where + ": " + e.what());
    }
}

std::string sha256_hex(const std::filesystem::path& path)
{
    const auto buf = read_all(path);
    const auto digest = sha256(buf.data(), buf.size());
    return hex(digest.data(), digest.size());
}

} // namespace corefusion
