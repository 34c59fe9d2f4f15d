// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/checkpoint.hpp"

#include "tsplat/errors.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <vector>

namespace tsplat {

using nlohmann::json;

void Checkpoint::validate() const {
    cloud.validate();
    deformation.validate();
}

namespace {

constexpr std::size_t kPreambleBytes = 8 + 4 + 4 + 8;

/// A tensor's name, shape and flat float values in row-major order.
struct Tensor {
    std::string name;
    std::vector<std::int64_t> shape;
    const float* data = nullptr;
    std::vector<float> owned;

    [[nodiscard]] std::size_t count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
};

template <typename Derived>
Tensor view(std::string name, std::vector<std::int64_t> shape, const Eigen::PlainObjectBase<Derived>& m) {
    static_assert(std::is_same_v<typename Derived::Scalar, float>);
    static_assert(Derived::IsRowMajor || Derived::ColsAtCompileTime == 1);
    Tensor t{std::move(name), std::move(shape), m.data(), {}};
    return t;
}

std::string now_iso8601() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<std::string> head_names() { return {"dmu", "ds", "dq", "dalpha"}; }

std::string layer_name(int i, int hidden) {
    return i < hidden ? std::to_string(i) : head_names()[static_cast<std::size_t>(i - hidden)];
}

std::vector<Tensor> collect(const Checkpoint& c) {
    const auto& cl = c.cloud;
    const auto n = static_cast<std::int64_t>(cl.size());
    std::vector<Tensor> ts;
    ts.push_back(view("means", {n, 3}, cl.means));
    ts.push_back(view("log_scales", {n, 3}, cl.log_scales));
    ts.push_back(view("quats", {n, 4}, cl.quats));
    ts.push_back(view("opacity_logits", {n, 1}, cl.opacity_logits));
    ts.push_back(view("sh_dc", {n, 1, 3}, cl.sh_dc));
    ts.push_back(view("sh_rest", {n, kShRest, 3}, cl.sh_rest));
    Tensor table{"deform_table", {n, 1}, nullptr, std::vector<float>(static_cast<std::size_t>(n))};
    for (std::int64_t i = 0; i < n; ++i) table.owned[static_cast<std::size_t>(i)] = cl.deform_table[i] ? 1.0f : 0.0f;
    table.data = table.owned.data();
    ts.push_back(std::move(table));

    const auto& f = c.deformation.field;
    for (int l = 0; l < f.levels(); ++l)
        for (int p = 0; p < kNumPlanes; ++p) {
            const int ra = f.resolution(kPlaneAxes[static_cast<std::size_t>(p)][0], l);
            const int rb = f.resolution(kPlaneAxes[static_cast<std::size_t>(p)][1], l);
            ts.push_back(view(std::string("hexplane.") + plane_name(p) + "." + std::to_string(l),
                              {rb, ra, f.feature_dim}, f.plane(p, l)));
        }
    Tensor bounds{"hexplane.bounds", {2, 3}, nullptr, {f.lo[0], f.lo[1], f.lo[2], f.hi[0], f.hi[1], f.hi[2]}};
    bounds.data = bounds.owned.data();
    ts.push_back(std::move(bounds));

    const auto& d = c.deformation.decoder;
    const int hidden = d.hidden_layers();
    for (int i = 0; i < static_cast<int>(d.weights.size()); ++i) {
        const auto& w = d.weights[static_cast<std::size_t>(i)];
        const auto& b = d.biases[static_cast<std::size_t>(i)];
        ts.push_back(view("mlp." + layer_name(i, hidden) + ".w", {w.rows(), w.cols()}, w));
        ts.push_back(view("mlp." + layer_name(i, hidden) + ".b", {b.size()}, b));
    }
    return ts;
}

void write_f32_le(std::ostream& out, const float* data, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t u;
            std::memcpy(&u, data + i, 4);
            const char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8), static_cast<char>(u >> 16),
                               static_cast<char>(u >> 24)};
            out.write(b, 4);
        }
    }
}

template <typename T>
void put_le(std::ostream& out, T v) {
    char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    out.write(b, sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return static_cast<T>(v);
}

json deformation_header(const DeformationModel<float>& m) {
    const auto& f = m.field;
    return json{{"feature_dim", f.feature_dim},
                {"base_spatial", f.base_spatial},
                {"base_temporal", f.base_temporal},
                {"multipliers", f.multipliers},
                {"hidden_layers", m.decoder.hidden_layers()},
                {"hidden_width", m.decoder.hidden_layers() > 0 ? m.decoder.weights.front().rows() : 0},
                {"input_dim", m.decoder.input_dim()},
                {"concat_position", m.concat_position},
                {"l1_time_magnitude", m.l1_time_magnitude},
                {"plane_order", {"xy", "xz", "yz", "xt", "yt", "zt"}}};
}

struct RawFile {
    json header;
    std::vector<unsigned char> bytes;
    std::size_t payload_offset = 0;
};

RawFile read_raw(const std::filesystem::path& path, bool need_payload) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open checkpoint " + path.string());
    RawFile raw;
    if (need_payload) {
        raw.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    } else {
        raw.bytes.resize(kPreambleBytes);
        in.read(reinterpret_cast<char*>(raw.bytes.data()), static_cast<std::streamsize>(kPreambleBytes));
        raw.bytes.resize(static_cast<std::size_t>(in.gcount()));
    }
    if (raw.bytes.size() < kPreambleBytes || std::memcmp(raw.bytes.data(), kCheckpointMagic, 8) != 0)
        throw MalformedCheckpoint(path.string() + " is not a tsplat checkpoint");
    const auto version = get_le<std::uint32_t>(raw.bytes.data() + 8);
    if (version != kCheckpointVersion)
        throw VersionMismatch("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    const auto header_len = get_le<std::uint64_t>(raw.bytes.data() + 16);
    if (!need_payload) {
        std::string text(static_cast<std::size_t>(header_len), '\0');
        in.read(text.data(), static_cast<std::streamsize>(header_len));
        if (static_cast<std::uint64_t>(in.gcount()) != header_len) throw TruncatedPayload("checkpoint header is truncated");
        try {
            raw.header = json::parse(text);
        } catch (const json::exception& e) {
            throw MalformedCheckpoint(std::string("checkpoint header is not valid JSON: ") + e.what());
        }
        return raw;
    }
    if (raw.bytes.size() < kPreambleBytes + header_len) throw TruncatedPayload("checkpoint header is truncated");
    try {
        raw.header = json::parse(raw.bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes),
                                 raw.bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleBytes + header_len));
    } catch (const json::exception& e) {
        throw MalformedCheckpoint(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    raw.payload_offset = (kPreambleBytes + header_len + 7) / 8 * 8;
    return raw;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    ckpt.validate();
    const auto tensors = collect(ckpt);
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        const std::uint64_t nbytes = t.count() * sizeof(float);
        dir.push_back({{"name", t.name}, {"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}});
        offset += nbytes;
    }
    json header{{"format", "tsplat-checkpoint"},
                {"version", kCheckpointVersion},
                {"created", ckpt.created.empty() ? now_iso8601() : ckpt.created},
                {"sh_convention", kShConvention},
                {"sh_degree", 3},
                {"mode", to_string(ckpt.mode)},
                {"scene_scale", static_cast<double>(ckpt.cloud.scene_scale)},
                {"num_gaussians", ckpt.cloud.size()},
                {"deformation", deformation_header(ckpt.deformation)},
                {"train_config", ckpt.train_config},
                {"payload_bytes", offset},
                {"tensors", dir}};
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 8);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, 0);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const std::size_t pad = (8 - (kPreambleBytes + text.size()) % 8) % 8;
    for (std::size_t i = 0; i < pad; ++i) out.put('\0');
    for (const auto& t : tensors) write_f32_le(out, t.data, t.count());
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

json read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path, false).header; }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const RawFile raw = read_raw(path, true);
    const json& h = raw.header;
    Checkpoint c;
    std::map<std::string, json> dir;
    try {
        if (h.at("sh_convention").get<std::string>() != kShConvention)
            throw MalformedCheckpoint("checkpoint uses an unknown SH convention");
        c.mode = mode_from_string(h.at("mode").get<std::string>());
        c.created = h.value("created", "");
        c.train_config = h.value("train_config", json::object());
        c.cloud.scene_scale = static_cast<float>(h.at("scene_scale").get<double>());
        for (const auto& e : h.at("tensors")) dir[e.at("name").get<std::string>()] = e;
    } catch (const json::exception& e) {
        throw MalformedCheckpoint(std::string("checkpoint header is missing fields: ") + e.what());
    } catch (const ConfigError& e) {
        throw MalformedCheckpoint(e.what());
    }

    const std::size_t payload_size = raw.bytes.size() - std::min(raw.bytes.size(), raw.payload_offset);
    auto fetch = [&](const std::string& name, const std::vector<std::int64_t>& shape) {
        const auto it = dir.find(name);
        if (it == dir.end()) throw DirectoryMismatch("checkpoint has no tensor '" + name + "'");
        const json& e = it->second;
        if (e.value("dtype", "") != "f32") throw DirectoryMismatch("tensor '" + name + "' is not f32");
        if (e.at("shape").get<std::vector<std::int64_t>>() != shape)
            throw DirectoryMismatch("tensor '" + name + "' has shape " + e.at("shape").dump() + ", expected " +
                                    json(shape).dump());
        std::size_t count = 1;
        for (auto d : shape) count *= static_cast<std::size_t>(d);
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto nbytes = e.at("nbytes").get<std::uint64_t>();
        if (nbytes != count * sizeof(float))
            throw DirectoryMismatch("tensor '" + name + "' byte length disagrees with its shape");
        if (offset + nbytes > payload_size)
            throw TruncatedPayload("tensor '" + name + "' extends past the end of the file");
        std::vector<float> v(count);
        const unsigned char* src = raw.bytes.data() + raw.payload_offset + offset;
        for (std::size_t i = 0; i < count; ++i) {
            const auto u = get_le<std::uint32_t>(src + 4 * i);
            std::memcpy(&v[i], &u, 4);
        }
        return v;
    };
    auto fill = [](auto& m, const std::vector<float>& v) {
        std::copy(v.begin(), v.end(), m.data());
    };

    std::int64_t n = 0;
    json dcfg;
    try {
        n = h.at("num_gaussians").get<std::int64_t>();
        dcfg = h.at("deformation");
    } catch (const json::exception& e) {
        throw MalformedCheckpoint(std::string("checkpoint header is missing fields: ") + e.what());
    }
    auto& cl = c.cloud;
    cl.means.resize(n, 3);
    cl.log_scales.resize(n, 3);
    cl.quats.resize(n, 4);
    cl.opacity_logits.resize(n);
    cl.sh_dc.resize(n, 3);
    cl.sh_rest.resize(n, 3 * kShRest);
    fill(cl.means, fetch("means", {n, 3}));
    fill(cl.log_scales, fetch("log_scales", {n, 3}));
    fill(cl.quats, fetch("quats", {n, 4}));
    fill(cl.opacity_logits, fetch("opacity_logits", {n, 1}));
    fill(cl.sh_dc, fetch("sh_dc", {n, 1, 3}));
    fill(cl.sh_rest, fetch("sh_rest", {n, kShRest, 3}));
    const auto table = fetch("deform_table", {n, 1});
    cl.deform_table.resize(n);
    for (std::int64_t i = 0; i < n; ++i) cl.deform_table[i] = table[static_cast<std::size_t>(i)] != 0.0f;

    auto& m = c.deformation;
    auto& f = m.field;
    int hidden = 0, width = 0, input_dim = 0;
    try {
        f.feature_dim = dcfg.at("feature_dim").get<int>();
        f.base_spatial = dcfg.at("base_spatial").get<int>();
        f.base_temporal = dcfg.at("base_temporal").get<int>();
        f.multipliers = dcfg.at("multipliers").get<std::vector<int>>();
        hidden = dcfg.at("hidden_layers").get<int>();
        width = dcfg.at("hidden_width").get<int>();
        input_dim = dcfg.at("input_dim").get<int>();
        m.concat_position = dcfg.at("concat_position").get<bool>();
        m.l1_time_magnitude = dcfg.value("l1_time_magnitude", false);
    } catch (const json::exception& e) {
        throw MalformedCheckpoint(std::string("checkpoint deformation header is incomplete: ") + e.what());
    }
    for (int l = 0; l < f.levels(); ++l)
        for (int p = 0; p < kNumPlanes; ++p) {
            const int ra = f.resolution(kPlaneAxes[static_cast<std::size_t>(p)][0], l);
            const int rb = f.resolution(kPlaneAxes[static_cast<std::size_t>(p)][1], l);
            MatX<float> plane(static_cast<Eigen::Index>(rb) * ra, f.feature_dim);
            fill(plane, fetch(std::string("hexplane.") + plane_name(p) + "." + std::to_string(l), {rb, ra, f.feature_dim}));
            f.planes.push_back(std::move(plane));
        }
    const auto bounds = fetch("hexplane.bounds", {2, 3});
    f.lo = Vec3<float>(bounds[0], bounds[1], bounds[2]);
    f.hi = Vec3<float>(bounds[3], bounds[4], bounds[5]);

    int fan_in = input_dim;
    for (int i = 0; i < hidden + kNumHeads; ++i) {
        const int out_dim = i < hidden ? width : std::vector<int>{3, 3, 4, 1}[static_cast<std::size_t>(i - hidden)];
        MatX<float> w(out_dim, fan_in);
        VecX<float> b(out_dim);
        fill(w, fetch("mlp." + layer_name(i, hidden) + ".w", {out_dim, fan_in}));
        fill(b, fetch("mlp." + layer_name(i, hidden) + ".b", {out_dim}));
        m.decoder.weights.push_back(std::move(w));
        m.decoder.biases.push_back(std::move(b));
        if (i < hidden) fan_in = width;
    }
    try {
        c.validate();
    } catch (const ShapeMismatch& e) {
        throw DirectoryMismatch(std::string("checkpoint tensors are inconsistent: ") + e.what());
    }
    return c;
}

} // namespace tsplat
