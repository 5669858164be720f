#include "mvps/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mvps/errors.hpp"
#include "mvps/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mvps::data {

nn::Tensor image_to_tensor(const img::Image& image) {
    if (image.empty()) throw SchemaError("image_to_tensor: empty image");
    const int h = image.height, w = image.width, c = image.channels;
    std::vector<float> v(static_cast<size_t>(c) * h * w);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                v[(static_cast<size_t>(ch) * h + y) * w + x] =
                    image.at(y, x, ch) / 127.5f - 1.0f;
    return nn::Tensor::from_data({1, c, h, w}, v);
}

img::Image tensor_to_image(const nn::Tensor& t) {
    if (t.ndim() != 4 || t.shape()[0] < 1 || (t.shape()[1] != 1 && t.shape()[1] != 3))
        throw SchemaError("tensor_to_image expects B x {1,3} x H x W");
    const int c = t.shape()[1], h = t.shape()[2], w = t.shape()[3];
    const std::vector<float>& v = t.values();
    img::Image out(h, w, c);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float f = std::clamp(v[(static_cast<size_t>(ch) * h + y) * w + x],
                                           -1.0f, 1.0f);
                out.at(y, x, ch) = static_cast<uint8_t>(std::lround((f + 1.0f) * 127.5f));
            }
    return out;
}

std::string SampleRecord::resolve(const std::string& rel) const {
    if (rel.empty()) return {};
    fs::path p(rel);
    if (p.is_absolute()) return rel;
    return (fs::path(base_dir) / p).string();
}

namespace {

// Pulls a typed field, rethrowing json's exceptions as SchemaError so every
// failure carries the manifest line it came from.
template <class T>
T field(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw SchemaError(where + ": field '" + std::string(key) + "': " + e.what());
    }
}

geo::GeoLocation parse_location(const json& j, const char* key, const std::string& where) {
    const json loc = field<json>(j, key, where);
    geo::GeoLocation out{field<double>(loc, "lat", where + "." + key),
                         field<double>(loc, "lon", where + "." + key)};
    try {
        geo::validate(out);
    } catch (const GeometryError& e) {
        throw SchemaError(where + "." + key + ": " + e.what());
    }
    return out;
}

SampleRecord parse_record(const json& j, const std::string& where, const std::string& base_dir) {
    SampleRecord rec;
    rec.base_dir = base_dir;
    rec.id = field<std::string>(j, "id", where);
    const std::string at = where + " (id '" + rec.id + "')";

    const json sat = field<json>(j, "satellite", at);
    rec.satellite_path = field<std::string>(sat, "path", at + ".satellite");
    rec.frame.center = parse_location(sat, "center", at + ".satellite");
    rec.frame.gsd = field<double>(sat, "gsd", at + ".satellite");
    rec.frame.size = field<int>(sat, "size", at + ".satellite");
    if (rec.frame.gsd <= 0.0 || rec.frame.size <= 0)
        throw SchemaError(at + ".satellite: gsd and size must be positive");

    rec.target = parse_location(j, "target", at);
    rec.target_pano_path = field<std::string>(j, "target_pano_path", at);
    if (j.contains("seg_path")) rec.seg_path = field<std::string>(j, "seg_path", at);

    const json panos = field<json>(j, "panoramas", at);
    if (!panos.is_array()) throw SchemaError(at + ": 'panoramas' must be an array");
    for (const auto& p : panos) {
        PanoramaRef ref;
        ref.path = field<std::string>(p, "path", at + ".panoramas");
        ref.loc = {field<double>(p, "lat", at + ".panoramas"),
                   field<double>(p, "lon", at + ".panoramas")};
        try {
            geo::validate(ref.loc);
        } catch (const GeometryError& e) {
            throw SchemaError(at + ".panoramas: " + e.what());
        }
        ref.distance_m = geo::haversine_distance(ref.loc, rec.target);
        rec.panoramas.push_back(std::move(ref));
    }
    std::stable_sort(rec.panoramas.begin(), rec.panoramas.end(),
                     [](const PanoramaRef& a, const PanoramaRef& b) {
                         return a.distance_m < b.distance_m;
                     });

    try {
        geo::geo_to_overhead_pixel(rec.target, rec.frame);
    } catch (const GeometryError&) {
        throw SchemaError("record '" + rec.id + "': target lies outside the satellite footprint");
    }
    return rec;
}

bool blank(const std::string& line) {
    return std::all_of(line.begin(), line.end(),
                       [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::vector<SampleRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest not found: " + path);
    const std::string base_dir = fs::path(path).parent_path().string();

    std::vector<SampleRecord> records;
    std::string line;
    for (int line_no = 1; std::getline(in, line); ++line_no) {
        if (blank(line)) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError(where + ": " + e.what());
        }
        records.push_back(parse_record(j, where, base_dir));
    }
    return records;
}

namespace {

img::Image load_pano(const SampleRecord& rec, const std::string& rel, int h,
                     img::ResizeFilter filter) {
    return img::resize(img::read_png(rec.resolve(rel)), h, 4 * h, filter);
}

}  // namespace

ConditionSet select_conditions(const SampleRecord& record, int k, int image_height,
                               img::ResizeFilter filter) {
    if (k < 1) throw SchemaError("select_conditions: k must be >= 1");
    if (image_height < 1) throw SchemaError("select_conditions: image_height must be >= 1");
    const int h = image_height;

    ConditionSet out;
    out.prompt = kDefaultPrompt;

    const img::Image sat =
        img::resize(img::read_png(record.resolve(record.satellite_path)), h, h, filter);
    out.satellite_tiled = img::Image(h, 4 * h, sat.channels);
    for (int y = 0; y < h; ++y)
        for (int rep = 0; rep < 4; ++rep)
            for (int x = 0; x < h; ++x)
                for (int c = 0; c < sat.channels; ++c)
                    out.satellite_tiled.at(y, rep * h + x, c) = sat.at(y, x, c);

    if (!record.seg_path.empty())
        out.seg = img::resize_nearest(img::read_png(record.resolve(record.seg_path)), h, 4 * h);
    out.seg_dropped = record.seg_path.empty();

    const int avail = std::min<int>(k, static_cast<int>(record.panoramas.size()));
    for (int i = 0; i < avail; ++i) {
        out.panos.push_back(load_pano(record, record.panoramas[i].path, h, filter));
        out.drop_mask.push_back(false);
    }
    const int channels = avail > 0 ? out.panos.front().channels : 3;
    for (int i = avail; i < k; ++i) {
        out.panos.emplace_back(h, 4 * h, channels);
        out.drop_mask.push_back(true);
    }
    return out;
}

std::vector<AttentionSource> select_attention_set(const SampleRecord& record, int n,
                                                  int image_height, img::ResizeFilter filter) {
    if (n < 0) throw SchemaError("select_attention_set: n must be >= 0");
    const int take = std::min<int>(n, static_cast<int>(record.panoramas.size()));
    std::vector<AttentionSource> out;
    out.reserve(take);
    for (int i = 0; i < take; ++i) {
        const PanoramaRef& ref = record.panoramas[i];
        out.push_back({load_pano(record, ref.path, image_height, filter), ref.loc,
                       ref.distance_m});
    }
    return out;
}

SplitSpec make_splits(const std::vector<SampleRecord>& records, double val_frac,
                      double test_frac, uint64_t seed) {
    if (val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0)
        throw SchemaError("make_splits: fractions must be non-negative and sum below 1");

    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.id);

    Rng rng = Rng::substream(seed, "splits");
    for (size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[rng.uniform_index(i)]);

    const size_t n = ids.size();
    const size_t n_val = static_cast<size_t>(std::lround(val_frac * n));
    const size_t n_test = static_cast<size_t>(std::lround(test_frac * n));

    SplitSpec s;
    s.val.assign(ids.begin(), ids.begin() + n_val);
    s.test.assign(ids.begin() + n_val, ids.begin() + n_val + n_test);
    s.train.assign(ids.begin() + n_val + n_test, ids.end());
    return s;
}

}  // namespace mvps::data
