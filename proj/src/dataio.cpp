// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#include "tsplat/dataio.hpp"

#include "tsplat/errors.hpp"
#include "tsplat/model.hpp"
#include "tsplat/parallel.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

namespace tsplat {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest

Camera<double> DatasetManifest::camera(std::size_t i) const {
    const Mat4<double>& c2w = frames.at(i).camera_to_world;
    Camera<double> cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = cx;
    cam.cy = cy;
    cam.width = width;
    cam.height = height;
    cam.near = near;
    cam.far = far;
    const Mat3<double> r = c2w.topLeftCorner<3, 3>();
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r.transpose();
    cam.world_to_camera.topRightCorner<3, 1>() = -r.transpose() * c2w.topRightCorner<3, 1>();
    return cam;
}

namespace {

Mat4<double> parse_pose(const json& j, std::size_t frame) {
    const std::string where = "frame " + std::to_string(frame) + ": camera_to_world";
    if (!j.is_array()) throw MalformedManifest(where + " must be an array of rows");
    Mat4<double> m = Mat4<double>::Identity();
    if (j.size() != 3 && j.size() != 4) throw MalformedManifest(where + " must have 3 or 4 rows, got " + std::to_string(j.size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
        const json& row = j[r];
        if (!row.is_array() || row.size() != 4)
            throw MalformedManifest(where + " row " + std::to_string(r) + " must hold 4 values, got " +
                                    std::to_string(row.is_array() ? row.size() : 0));
        for (std::size_t c = 0; c < 4; ++c) {
            if (!row[c].is_number()) throw MalformedManifest(where + " holds a non-numeric entry");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].get<double>();
        }
    }
    if (!m.allFinite()) throw MalformedManifest(where + " holds non-finite values");
    return m;
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw MalformedManifest(where + ": missing '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw MalformedManifest(where + ": field '" + key + "' has the wrong type");
    }
}

} // namespace

DatasetManifest parse_manifest(const json& j, const fs::path& root, bool require_images) {
    if (!j.is_object()) throw MalformedManifest("manifest must be a JSON object");
    DatasetManifest m;
    m.root = root;
    m.version = field<int>(j, "version", "manifest");
    if (m.version != kManifestVersion)
        throw MalformedManifest("manifest version " + std::to_string(m.version) + " is not supported");
    m.width = field<int>(j, "width", "manifest");
    m.height = field<int>(j, "height", "manifest");
    if (m.width <= 0 || m.height <= 0) throw MalformedManifest("manifest: width and height must be positive");
    const json intr = j.contains("intrinsics") ? j.at("intrinsics") : json::object();
    m.fx = field<double>(intr, "fx", "manifest intrinsics");
    m.fy = field<double>(intr, "fy", "manifest intrinsics");
    m.cx = field<double>(intr, "cx", "manifest intrinsics");
    m.cy = field<double>(intr, "cy", "manifest intrinsics");
    if (!(m.fx > 0 && m.fy > 0)) throw MalformedManifest("manifest intrinsics: focal lengths must be positive");
    m.near = j.value("near", m.near);
    m.far = j.value("far", m.far);
    if (!(m.near > 0 && m.near < m.far)) throw MalformedManifest("manifest: need 0 < near < far");
    const std::string src = j.value("depth_source", std::string("binocular"));
    if (src == "binocular") m.depth_source = DepthSource::Binocular;
    else if (src == "monocular") m.depth_source = DepthSource::Monocular;
    else throw MalformedManifest("manifest: depth_source must be 'binocular' or 'monocular'");

    if (!j.contains("frames") || !j.at("frames").is_array()) throw MalformedManifest("manifest: missing frames array");
    const json& frames = j.at("frames");
    if (frames.empty()) throw MalformedManifest("manifest: no frames");
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const json& f = frames[i];
        const std::string where = "frame " + std::to_string(i);
        if (!f.is_object()) throw MalformedManifest(where + " must be an object");
        FrameEntry e;
        e.rgb = f.value("rgb", std::string());
        e.depth = f.value("depth", std::string());
        e.mask = f.value("mask", std::string());
        e.depth_format = f.value("depth_format", std::string("png16"));
        e.depth_scale = f.value("depth_scale", 1.0);
        if (e.depth_format != "png16" && e.depth_format != "f32")
            throw MalformedManifest(where + ": depth_format must be 'png16' or 'f32'");
        if (!(e.depth_scale > 0)) throw MalformedManifest(where + ": depth_scale must be positive");
        if (require_images && e.rgb.empty()) throw MalformedManifest(where + ": missing 'rgb'");
        if (!f.contains("camera_to_world")) throw MalformedManifest(where + ": missing 'camera_to_world'");
        e.camera_to_world = parse_pose(f.at("camera_to_world"), i);
        e.time = field<double>(f, "time", where);
        if (!(e.time >= 0.0 && e.time <= 1.0)) throw MalformedManifest(where + ": time must lie in [0, 1]");
        if (!m.frames.empty() && !(e.time > m.frames.back().time))
            throw MalformedManifest(where + ": timestamps must be strictly increasing");
        m.frames.push_back(std::move(e));
    }
    return m;
}

json manifest_to_json(const DatasetManifest& m) {
    json frames = json::array();
    for (const auto& f : m.frames) {
        json pose = json::array();
        for (int r = 0; r < 4; ++r) pose.push_back({f.camera_to_world(r, 0), f.camera_to_world(r, 1), f.camera_to_world(r, 2), f.camera_to_world(r, 3)});
        json e{{"camera_to_world", pose}, {"time", f.time}};
        if (!f.rgb.empty()) e["rgb"] = f.rgb;
        if (!f.depth.empty()) {
            e["depth"] = f.depth;
            e["depth_format"] = f.depth_format;
            e["depth_scale"] = f.depth_scale;
        }
        if (!f.mask.empty()) e["mask"] = f.mask;
        frames.push_back(std::move(e));
    }
    return json{{"version", m.version},
                {"width", m.width},
                {"height", m.height},
                {"intrinsics", {{"fx", m.fx}, {"fy", m.fy}, {"cx", m.cx}, {"cy", m.cy}}},
                {"near", m.near},
                {"far", m.far},
                {"depth_source", m.depth_source == DepthSource::Binocular ? "binocular" : "monocular"},
                {"frames", frames}};
}

DatasetManifest load_manifest(const fs::path& path, bool require_images) {
    const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
    std::ifstream in(file);
    if (!in) throw MissingFile("manifest not found: " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw MalformedManifest("manifest " + file.string() + " is not valid JSON: " + e.what());
    }
    return parse_manifest(j, file.parent_path(), require_images);
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << manifest_to_json(m).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngError {
    char message[256] = {};
};

void png_error_fn(png_structp png, png_const_charp msg) {
    auto* err = static_cast<PngError*>(png_get_error_ptr(png));
    std::snprintf(err->message, sizeof err->message, "%s", msg);
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

} // namespace

PngImage read_png(const fs::path& path) {
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
    if (!file) throw MissingFile("cannot open image " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw ImageDecodeError(path.string() + " is not a PNG file");

    PngError err;
    PngImage img;
    std::vector<png_bytep> rows;
    std::vector<unsigned char> buffer;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageDecodeError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageDecodeError("cannot decode " + path.string() + ": " + err.message);
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = png_get_channels(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * static_cast<std::size_t>(img.height));
    rows.resize(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    img.samples.resize(n);
    if (img.bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i)
            img.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
    } else if (img.bit_depth == 8) {
        for (std::size_t i = 0; i < n; ++i) img.samples[i] = buffer[i];
    } else {
        throw ImageDecodeError(path.string() + ": unsupported bit depth " + std::to_string(img.bit_depth));
    }
    return img;
}

void write_png(const fs::path& path, const PngImage& img) {
    if (img.channels < 1 || img.channels > 4 || (img.bit_depth != 8 && img.bit_depth != 16))
        throw ContractViolation("write_png: unsupported layout");
    if (img.samples.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw ShapeMismatch("write_png: sample count differs from the image size");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot write image " + path.string());

    const int bytes = img.bit_depth / 8;
    const std::size_t rowbytes = static_cast<std::size_t>(img.width) * img.channels * bytes;
    std::vector<unsigned char> buffer(rowbytes * static_cast<std::size_t>(img.height));
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
        if (bytes == 2) {
            buffer[2 * i] = static_cast<unsigned char>(img.samples[i] >> 8);
            buffer[2 * i + 1] = static_cast<unsigned char>(img.samples[i] & 0xff);
        } else {
            buffer[i] = static_cast<unsigned char>(std::min<std::uint16_t>(img.samples[i], 255));
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * static_cast<std::size_t>(y);

    PngError err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("cannot encode " + path.string() + ": " + err.message);
    }
    static constexpr int kColorTypes[5] = {0, PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                           PNG_COLOR_TYPE_RGB_ALPHA};
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
                 kColorTypes[img.channels], PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void write_png_rgb(const fs::path& path, const Image<float>& rgb) {
    if (rgb.channels() != 3) throw ShapeMismatch("write_png_rgb: expected 3 channels");
    PngImage img{rgb.width, rgb.height, 3, 8, std::vector<std::uint16_t>(static_cast<std::size_t>(rgb.data.size()))};
    for (Eigen::Index k = 0; k < rgb.data.size(); ++k) {
        const float v = std::clamp(rgb.data.data()[k], 0.0f, 1.0f);
        img.samples[static_cast<std::size_t>(k)] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
    }
    write_png(path, img);
}

namespace {

Image<float> png_to_rgb(const PngImage& png) {
    Image<float> out(png.width, png.height, 3);
    const float scale = png.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (Eigen::Index p = 0; p < out.pixels(); ++p)
        for (int c = 0; c < 3; ++c) {
            const int src = png.channels >= 3 ? c : 0;
            out.data(p, c) = static_cast<float>(png.samples[static_cast<std::size_t>(p) * png.channels + src]) * scale;
        }
    return out;
}

} // namespace

Image<float> read_png_rgb(const fs::path& path) { return png_to_rgb(read_png(path)); }

// ---------------------------------------------------------------------------
// PFM

Image<float> read_pfm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    in >> magic >> w >> h >> scale;
    in.get();
    if ((magic != "Pf" && magic != "PF") || w <= 0 || h <= 0 || scale == 0.0 || !in)
        throw ImageDecodeError(path.string() + " is not a PFM file");
    const int channels = magic == "PF" ? 3 : 1;
    const bool little = scale < 0;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ImageDecodeError(path.string() + " is truncated");
    Image<float> out(w, h, channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const std::size_t i = ((static_cast<std::size_t>(h - 1 - y) * w + x) * channels + c) * 4;
                std::uint32_t u = little ? (raw[i] | raw[i + 1] << 8 | raw[i + 2] << 16 | static_cast<std::uint32_t>(raw[i + 3]) << 24)
                                         : (static_cast<std::uint32_t>(raw[i]) << 24 | raw[i + 1] << 16 | raw[i + 2] << 8 | raw[i + 3]);
                float v;
                std::memcpy(&v, &u, 4);
                out(x, y, c) = v;
            }
    return out;
}

void write_pfm(const fs::path& path, const Image<float>& img) {
    if (img.channels() != 1 && img.channels() != 3) throw ShapeMismatch("write_pfm: expected 1 or 3 channels");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << (img.channels() == 3 ? "PF" : "Pf") << "\n" << img.width << " " << img.height << "\n-1.0\n";
    for (int y = img.height - 1; y >= 0; --y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels(); ++c) {
                std::uint32_t u;
                const float v = img(x, y, c);
                std::memcpy(&u, &v, 4);
                const char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8), static_cast<char>(u >> 16),
                                   static_cast<char>(u >> 24)};
                out.write(b, 4);
            }
    if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Downscaling

namespace {

/// Weights of full-resolution pixels under a width-k box centered at k * i.
std::vector<std::pair<int, double>> box_support(int i, int k, int full) {
    std::vector<std::pair<int, double>> w;
    const double center = static_cast<double>(k) * i, half = 0.5 * k;
    for (int j = static_cast<int>(std::floor(center - half)); j <= static_cast<int>(std::ceil(center + half)); ++j) {
        if (j < 0 || j >= full) continue;
        const double overlap = std::min(center + half, j + 0.5) - std::max(center - half, j - 0.5);
        if (overlap > 1e-12) w.emplace_back(j, overlap);
    }
    return w;
}

} // namespace

Image<float> downscale_rgb(const Image<float>& img, int k) {
    if (k == 1) return img;
    if (k < 1) throw ConfigError("resolution scale must be a positive integer");
    const int w = img.width / k, h = img.height / k;
    Image<float> out(w, h, img.channels());
    for (int y = 0; y < h; ++y) {
        const auto wy = box_support(y, k, img.height);
        for (int x = 0; x < w; ++x) {
            const auto wx = box_support(x, k, img.width);
            for (int c = 0; c < img.channels(); ++c) {
                double s = 0, total = 0;
                for (auto [yy, a] : wy)
                    for (auto [xx, b] : wx) {
                        s += a * b * img(xx, yy, c);
                        total += a * b;
                    }
                out(x, y, c) = static_cast<float>(s / total);
            }
        }
    }
    return out;
}

Image<float> downscale_depth(const Image<float>& depth, int k) {
    if (k == 1 || depth.pixels() == 0) return depth;
    if (k < 1) throw ConfigError("resolution scale must be a positive integer");
    const int w = depth.width / k, h = depth.height / k;
    Image<float> out(w, h, depth.channels());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < depth.channels(); ++c) out(x, y, c) = depth(k * x, k * y, c);
    return out;
}

Mask downscale_mask(const Mask& mask, int k) {
    if (k == 1 || mask.pixels() == 0) return mask;
    if (k < 1) throw ConfigError("resolution scale must be a positive integer");
    const int w = mask.width / k, h = mask.height / k;
    Mask out(w, h, 1);
    for (int y = 0; y < h; ++y) {
        const auto wy = box_support(y, k, mask.height);
        for (int x = 0; x < w; ++x) {
            const auto wx = box_support(x, k, mask.width);
            std::uint8_t any = 0;
            for (auto [yy, a] : wy)
                for (auto [xx, b] : wx) any |= mask(xx, yy) != 0;
            out(x, y) = any;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset loading

namespace {

fs::path resolve(const DatasetManifest& m, const std::string& rel) {
    const fs::path p(rel);
    return p.is_absolute() ? p : m.root / p;
}

void require_file(const fs::path& p, std::size_t frame, const char* what) {
    if (!fs::exists(p))
        throw MissingFile("frame " + std::to_string(frame) + ": " + what + " file not found: " + p.string());
}

void check_dims(int w, int h, const DatasetManifest& m, std::size_t frame, const char* what) {
    if (w != m.width || h != m.height)
        throw DimensionMismatch("frame " + std::to_string(frame) + ": " + what + " is " + std::to_string(w) + "x" +
                                std::to_string(h) + ", manifest says " + std::to_string(m.width) + "x" +
                                std::to_string(m.height));
}

} // namespace

Dataset load_dataset(const fs::path& path, int resolution_scale) {
    if (resolution_scale < 1) throw ConfigError("resolution scale must be a positive integer");
    Dataset ds;
    ds.manifest = load_manifest(path, true);
    ds.resolution_scale = resolution_scale;
    const auto& m = ds.manifest;
    for (std::size_t i = 0; i < m.frames.size(); ++i) {
        const auto& f = m.frames[i];
        require_file(resolve(m, f.rgb), i, "rgb");
        if (!f.depth.empty()) require_file(resolve(m, f.depth), i, "depth");
        if (!f.mask.empty()) require_file(resolve(m, f.mask), i, "mask");
    }

    const int k = resolution_scale;
    ds.frames.resize(m.frames.size());
    parallel_for(m.frames.size(), [&](std::size_t i) {
        const auto& f = m.frames[i];
        FrameRecord& rec = ds.frames[i];
        rec.index = static_cast<int>(i);
        rec.t = static_cast<float>(f.time);

        const PngImage rgb = read_png(resolve(m, f.rgb));
        check_dims(rgb.width, rgb.height, m, i, "rgb");
        rec.rgb = downscale_rgb(png_to_rgb(rgb), k);

        if (!f.depth.empty()) {
            Image<float> depth;
            if (f.depth_format == "f32") {
                depth = read_pfm(resolve(m, f.depth));
                if (depth.channels() != 1) throw ImageDecodeError("frame " + std::to_string(i) + ": depth must be single-channel");
            } else {
                const PngImage d = read_png(resolve(m, f.depth));
                if (d.channels != 1) throw ImageDecodeError("frame " + std::to_string(i) + ": depth PNG must be grayscale");
                depth = Image<float>(d.width, d.height, 1);
                for (Eigen::Index p = 0; p < depth.pixels(); ++p) depth.data(p, 0) = static_cast<float>(d.samples[static_cast<std::size_t>(p)]);
            }
            check_dims(depth.width, depth.height, m, i, "depth");
            for (Eigen::Index p = 0; p < depth.pixels(); ++p) {
                const double v = depth.data(p, 0) * f.depth_scale;
                depth.data(p, 0) = std::isfinite(v) && v > 0 ? static_cast<float>(v) : 0.0f;
            }
            rec.depth = downscale_depth(depth, k);
        }
        if (!f.mask.empty()) {
            const PngImage mk = read_png(resolve(m, f.mask));
            check_dims(mk.width, mk.height, m, i, "mask");
            Mask mask(mk.width, mk.height, 1);
            for (Eigen::Index p = 0; p < mask.pixels(); ++p) {
                bool tool = false;
                for (int c = 0; c < std::min(mk.channels, 3); ++c)
                    tool = tool || mk.samples[static_cast<std::size_t>(p) * mk.channels + c] != 0;
                mask.data(p, 0) = tool;
            }
            rec.tool_mask = downscale_mask(mask, k);
        }
    });

    ds.manifest.width = m.width / k;
    ds.manifest.height = m.height / k;
    ds.manifest.fx = m.fx / k;
    ds.manifest.fy = m.fy / k;
    ds.manifest.cx = m.cx / k;
    ds.manifest.cy = m.cy / k;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        ds.frames[i].camera = ds.manifest.camera(i).cast<float>();
        ds.frames[i].camera.validate();
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Point clouds

void PointSet::append(const PointSet& other) {
    const Eigen::Index n = size(), m = other.size();
    Rows<double, 3> p(n + m, 3), c(n + m, 3);
    Flags t(n + m);
    p << points, other.points;
    c << colors, other.colors;
    t << tool, other.tool;
    points = std::move(p);
    colors = std::move(c);
    tool = std::move(t);
}

PointSet depth_to_points(const FrameRecord& frame, bool exclude_tool, int stride) {
    if (stride < 1) throw ConfigError("depth_to_points: stride must be at least 1");
    const auto& cam = frame.camera;
    const Mat3<double> r = cam.rotation().cast<double>();
    const Vec3<double> t = cam.translation().cast<double>();
    const Mat3<double> rt = r.transpose();
    const bool has_mask = frame.tool_mask.pixels() > 0;
    std::vector<Vec3<double>> pts, cols;
    std::vector<std::uint8_t> tool;
    if (frame.depth.pixels() == 0) return PointSet{Rows<double, 3>(0, 3), Rows<double, 3>(0, 3), Flags(0)};
    for (int y = 0; y < frame.depth.height; y += stride)
        for (int x = 0; x < frame.depth.width; x += stride) {
            const double z = frame.depth(x, y);
            if (!(z > 0)) continue;
            const bool is_tool = has_mask && frame.tool_mask(x, y) != 0;
            if (exclude_tool && is_tool) continue;
            const Vec3<double> pc((x - cam.cx) / static_cast<double>(cam.fx) * z,
                                  (y - cam.cy) / static_cast<double>(cam.fy) * z, z);
            pts.push_back(rt * (pc - t));
            cols.emplace_back(frame.rgb(x, y, 0), frame.rgb(x, y, 1), frame.rgb(x, y, 2));
            tool.push_back(is_tool);
        }
    PointSet out;
    const auto n = static_cast<Eigen::Index>(pts.size());
    out.points.resize(n, 3);
    out.colors.resize(n, 3);
    out.tool.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.points.row(i) = pts[static_cast<std::size_t>(i)].transpose();
        out.colors.row(i) = cols[static_cast<std::size_t>(i)].transpose();
        out.tool[i] = tool[static_cast<std::size_t>(i)];
    }
    return out;
}

namespace {

constexpr int kKeyBits = 21;

/// Packed voxel keys; requires the grid to fit kKeyBits per axis.
std::vector<std::uint64_t> voxel_keys(const Rows<double, 3>& pts, double voxel) {
    const Vec3<double> lo = pts.colwise().minCoeff().transpose();
    std::vector<std::uint64_t> keys(static_cast<std::size_t>(pts.rows()));
    constexpr std::uint64_t kMax = (1ull << kKeyBits) - 1;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        std::uint64_t key = 0;
        for (int a = 0; a < 3; ++a) {
            const auto cell = static_cast<std::uint64_t>(std::floor((pts(i, a) - lo[a]) / voxel));
            key = (key << kKeyBits) | std::min(cell, kMax);
        }
        keys[static_cast<std::size_t>(i)] = key;
    }
    return keys;
}

std::size_t count_voxels(const Rows<double, 3>& pts, double voxel) {
    auto keys = voxel_keys(pts, voxel);
    std::sort(keys.begin(), keys.end());
    return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

double min_voxel(const Rows<double, 3>& pts) {
    const double extent = (pts.colwise().maxCoeff() - pts.colwise().minCoeff()).maxCoeff();
    return std::max(extent, 1e-12) / static_cast<double>((1ull << kKeyBits) - 2);
}

} // namespace

PointSet voxel_downsample(const PointSet& in, double voxel) {
    if (in.size() == 0) return in;
    if (!(voxel > 0)) throw ConfigError("voxel size must be positive");
    voxel = std::max(voxel, min_voxel(in.points));
    const auto keys = voxel_keys(in.points, voxel);
    std::vector<Eigen::Index> order(keys.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)]; });
    std::vector<Vec3<double>> pts, cols;
    std::vector<std::uint8_t> tool;
    for (std::size_t s = 0; s < order.size();) {
        std::size_t e = s;
        Vec3<double> p = Vec3<double>::Zero(), c = Vec3<double>::Zero();
        std::size_t tools = 0;
        while (e < order.size() && keys[static_cast<std::size_t>(order[e])] == keys[static_cast<std::size_t>(order[s])]) {
            p += in.points.row(order[e]).transpose();
            c += in.colors.row(order[e]).transpose();
            tools += in.tool[order[e]] != 0;
            ++e;
        }
        const double n = static_cast<double>(e - s);
        pts.push_back(p / n);
        cols.push_back(c / n);
        tool.push_back(2 * tools > e - s);
        s = e;
    }
    PointSet out;
    const auto n = static_cast<Eigen::Index>(pts.size());
    out.points.resize(n, 3);
    out.colors.resize(n, 3);
    out.tool.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.points.row(i) = pts[static_cast<std::size_t>(i)].transpose();
        out.colors.row(i) = cols[static_cast<std::size_t>(i)].transpose();
        out.tool[i] = tool[static_cast<std::size_t>(i)];
    }
    return out;
}

AccumulatedCloud accumulate_point_cloud(const std::vector<FrameRecord>& frames, Mode mode,
                                        const AccumulateOptions& options) {
    if (frames.empty()) throw EmptyInput("accumulate_point_cloud: no frames");
    std::vector<PointSet> parts(frames.size());
    parallel_for(frames.size(), [&](std::size_t i) {
        parts[i] = depth_to_points(frames[i], mode == Mode::TissueOnly, options.stride);
    });
    AccumulatedCloud out;
    out.points = PointSet{Rows<double, 3>(0, 3), Rows<double, 3>(0, 3), Flags(0)};
    for (const auto& p : parts) out.points.append(p);
    if (out.points.size() == 0) throw EmptyCloud("no valid depth pixels to seed the point cloud");

    const auto target = static_cast<std::size_t>(std::max(options.target_count, 0));
    const auto m = static_cast<std::size_t>(out.points.size());
    if (target > 0 && static_cast<double>(m) > target * (1.0 + options.tolerance)) {
        const auto& pts = out.points.points;
        double lo = min_voxel(pts);
        double hi = std::max((pts.colwise().maxCoeff() - pts.colwise().minCoeff()).maxCoeff(), lo * 2);
        double best = hi;
        double best_err = std::numeric_limits<double>::infinity();
        for (int it = 0; it < 60; ++it) {
            const double mid = std::sqrt(lo * hi);
            const auto count = static_cast<double>(count_voxels(pts, mid));
            const double err = std::abs(count - static_cast<double>(target)) / static_cast<double>(target);
            if (err < best_err) {
                best_err = err;
                best = mid;
            }
            if (err <= options.tolerance) break;
            if (count > static_cast<double>(target)) lo = mid;
            else hi = mid;
        }
        out.voxel = best;
        out.points = voxel_downsample(out.points, best);
    }
    out.scene_scale = bounding_sphere_radius(out.points.points);
    return out;
}

// ---------------------------------------------------------------------------
// PLY

void write_ply(const fs::path& path, const PointSet& pts) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << pts.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n"
           "property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar tool\nend_header\n";
    for (Eigen::Index i = 0; i < pts.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            const auto v = static_cast<float>(pts.points(i, a));
            std::uint32_t u;
            std::memcpy(&u, &v, 4);
            const char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8), static_cast<char>(u >> 16),
                               static_cast<char>(u >> 24)};
            out.write(b, 4);
        }
        for (int c = 0; c < 3; ++c)
            out.put(static_cast<char>(std::lround(std::clamp(pts.colors(i, c), 0.0, 1.0) * 255.0)));
        out.put(static_cast<char>(pts.tool.size() ? pts.tool[i] : 0));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

PointSet read_ply(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "ply") throw ImageDecodeError(path.string() + " is not a PLY file");
    std::size_t count = 0;
    struct Prop {
        std::string type, name;
    };
    std::vector<Prop> props;
    bool binary_le = false, in_vertex = false;
    while (std::getline(in, line) && line != "end_header") {
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ss >> name >> count;
            in_vertex = name == "vertex";
            if (!in_vertex && !props.empty()) break;
        } else if (word == "property" && in_vertex) {
            Prop p;
            ss >> p.type >> p.name;
            props.push_back(p);
        }
    }
    if (!binary_le) throw ImageDecodeError(path.string() + ": only binary_little_endian PLY is supported");
    auto size_of = [&](const std::string& t) -> std::size_t {
        if (t == "float" || t == "float32" || t == "int" || t == "uint") return 4;
        if (t == "double" || t == "float64") return 8;
        if (t == "uchar" || t == "uint8" || t == "char") return 1;
        if (t == "short" || t == "ushort") return 2;
        throw ImageDecodeError(path.string() + ": unsupported PLY property type " + t);
    };
    std::size_t stride = 0;
    for (const auto& p : props) stride += size_of(p.type);
    std::vector<unsigned char> raw(stride * count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ImageDecodeError(path.string() + " is truncated");

    PointSet out;
    out.points = Rows<double, 3>::Zero(static_cast<Eigen::Index>(count), 3);
    out.colors = Rows<double, 3>::Constant(static_cast<Eigen::Index>(count), 3, 0.5);
    out.tool = Flags::Zero(static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* rec = raw.data() + i * stride;
        for (const auto& p : props) {
            double v = 0;
            if (p.type == "float" || p.type == "float32") {
                std::uint32_t u = rec[0] | rec[1] << 8 | rec[2] << 16 | static_cast<std::uint32_t>(rec[3]) << 24;
                float f;
                std::memcpy(&f, &u, 4);
                v = f;
            } else if (p.type == "double" || p.type == "float64") {
                std::uint64_t u = 0;
                for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(rec[b]) << (8 * b);
                std::memcpy(&v, &u, 8);
            } else if (size_of(p.type) == 1) {
                v = rec[0];
            }
            const auto r = static_cast<Eigen::Index>(i);
            if (p.name == "x") out.points(r, 0) = v;
            else if (p.name == "y") out.points(r, 1) = v;
            else if (p.name == "z") out.points(r, 2) = v;
            else if (p.name == "red") out.colors(r, 0) = v / 255.0;
            else if (p.name == "green") out.colors(r, 1) = v / 255.0;
            else if (p.name == "blue") out.colors(r, 2) = v / 255.0;
            else if (p.name == "tool") out.tool[r] = v != 0;
            rec += size_of(p.type);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// NPY and conversion

NpyArray read_npy(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open " + path.string());
    char magic[6];
    in.read(magic, 6);
    if (std::memcmp(magic, "\x93NUMPY", 6) != 0) throw MalformedManifest(path.string() + " is not a .npy file");
    unsigned char ver[2];
    in.read(reinterpret_cast<char*>(ver), 2);
    std::size_t header_len = 0;
    if (ver[0] == 1) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        header_len = b[0] | b[1] << 8;
    } else {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        header_len = b[0] | b[1] << 8 | b[2] << 16 | static_cast<std::size_t>(b[3]) << 24;
    }
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    std::smatch match;
    if (!std::regex_search(header, match, std::regex("'descr':\\s*'([<>|=]?)(f[48])'")))
        throw MalformedManifest(path.string() + ": only float32/float64 arrays are supported");
    const bool big = match[1] == ">";
    const std::size_t item = match[2] == "f8" ? 8 : 4;
    if (header.find("'fortran_order': True") != std::string::npos)
        throw MalformedManifest(path.string() + ": Fortran-ordered arrays are not supported");
    if (!std::regex_search(header, match, std::regex("'shape':\\s*\\(([^)]*)\\)")))
        throw MalformedManifest(path.string() + ": missing shape");
    NpyArray arr;
    const std::string shape = match[1];
    std::regex num("\\d+");
    for (auto it = std::sregex_iterator(shape.begin(), shape.end(), num); it != std::sregex_iterator(); ++it)
        arr.shape.push_back(static_cast<std::size_t>(std::stoull(it->str())));
    std::size_t count = 1;
    for (auto d : arr.shape) count *= d;
    std::vector<unsigned char> raw(count * item);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw MalformedManifest(path.string() + " is truncated");
    arr.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t u = 0;
        for (std::size_t b = 0; b < item; ++b) {
            const std::size_t src = big ? i * item + (item - 1 - b) : i * item + b;
            u |= static_cast<std::uint64_t>(raw[src]) << (8 * b);
        }
        if (item == 8) {
            std::memcpy(&arr.data[i], &u, 8);
        } else {
            const auto u32 = static_cast<std::uint32_t>(u);
            float f;
            std::memcpy(&f, &u32, 4);
            arr.data[i] = f;
        }
    }
    return arr;
}

namespace {

std::vector<fs::path> sorted_files(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

std::string relative_to(const fs::path& p, const fs::path& base) {
    const fs::path rel = fs::absolute(p).lexically_relative(fs::absolute(base));
    return rel.empty() ? fs::absolute(p).string() : rel.string();
}

} // namespace

DatasetManifest convert_endonerf(const fs::path& src, const fs::path& out_manifest, const ConvertOptions& options) {
    const NpyArray poses = read_npy(src / "poses_bounds.npy");
    if (poses.shape.size() != 2 || poses.shape[1] != 17)
        throw MalformedManifest("poses_bounds.npy must have shape (N, 17)");
    const std::size_t n = poses.shape[0];
    const auto images = sorted_files(src / "images");
    const auto depths = sorted_files(src / "depth");
    const auto masks = sorted_files(src / "masks");
    if (images.size() != n)
        throw DimensionMismatch("found " + std::to_string(images.size()) + " images for " + std::to_string(n) + " poses");
    if (!depths.empty() && depths.size() != n) throw DimensionMismatch("depth map count differs from the pose count");
    if (!masks.empty() && masks.size() != n) throw DimensionMismatch("mask count differs from the pose count");
    if (n == 0) throw EmptyInput("no frames to convert");

    const PngImage first = read_png(images.front());
    DatasetManifest m;
    m.width = first.width;
    m.height = first.height;
    m.depth_source = options.depth_source;
    const double* row0 = poses.data.data();
    const double hwf_h = row0[4], hwf_w = row0[9], focal = row0[14];
    const double f = focal * (hwf_w > 0 ? m.width / hwf_w : 1.0);
    (void)hwf_h;
    m.fx = m.fy = f;
    m.cx = 0.5 * m.width - 0.5;
    m.cy = 0.5 * m.height - 0.5;
    double near = std::numeric_limits<double>::infinity(), far = 0;
    const fs::path out_dir = out_manifest.has_parent_path() ? out_manifest.parent_path() : fs::path(".");
    m.root = out_dir;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = poses.data.data() + i * 17;
        Mat4<double> c2w = Mat4<double>::Identity();
        for (int r = 0; r < 3; ++r) {
            // LLFF columns are (down, right, back); OpenCV wants (right, down, forward).
            c2w(r, 0) = row[r * 5 + 1];
            c2w(r, 1) = row[r * 5 + 0];
            c2w(r, 2) = -row[r * 5 + 2];
            c2w(r, 3) = row[r * 5 + 3];
        }
        near = std::min(near, row[15]);
        far = std::max(far, row[16]);
        FrameEntry e;
        e.camera_to_world = c2w;
        e.time = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        e.rgb = relative_to(images[i], out_dir);
        if (!depths.empty()) {
            e.depth = relative_to(depths[i], out_dir);
            e.depth_format = options.depth_format;
            e.depth_scale = options.depth_scale;
        }
        if (!masks.empty()) {
            if (options.invert_mask) {
                PngImage mk = read_png(masks[i]);
                const std::uint16_t top = mk.bit_depth == 16 ? 65535 : 255;
                PngImage inv{mk.width, mk.height, 1, 8, std::vector<std::uint16_t>(static_cast<std::size_t>(mk.width) * mk.height)};
                for (std::size_t p = 0; p < inv.samples.size(); ++p)
                    inv.samples[p] = mk.samples[p * static_cast<std::size_t>(mk.channels)] == 0 ? 255 : 0;
                (void)top;
                const fs::path dst = out_dir / "tool_masks" / masks[i].filename();
                write_png(dst, inv);
                e.mask = relative_to(dst, out_dir);
            } else {
                e.mask = relative_to(masks[i], out_dir);
            }
        }
        m.frames.push_back(std::move(e));
    }
    // Clip planes with slack around the recorded depth bounds.
    m.near = near > 0 && std::isfinite(near) ? 0.5 * near : 0.01;
    m.far = far > m.near ? 2.0 * far : 1000.0;
    save_manifest(out_manifest, m);
    return m;
}

} // namespace tsplat
