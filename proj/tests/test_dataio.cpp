#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>
#include <zlib.h>

#include "mvps/checkpoint.hpp"
#include "mvps/config.hpp"
#include "mvps/dataio.hpp"
#include "mvps/errors.hpp"
#include "mvps/rng.hpp"
#include "mvps/synthworld.hpp"

using namespace mvps;
using namespace mvps::data;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

// Minimal well-formed record the error tests can perturb.
json base_record(const std::string& id) {
    return json{
        {"id", id},
        {"satellite",
         {{"path", "sat.png"},
          {"center", {{"lat", 40.70}, {"lon", -73.95}}},
          {"gsd", 0.5},
          {"size", 128}}},
        {"panoramas", json::array()},
        {"target", {{"lat", 40.70}, {"lon", -73.95}}},
        {"target_pano_path", "target.png"}};
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("synthetic manifest round-trips through load_manifest") {
    const fs::path dir = fresh_dir("mvps_dataio_roundtrip");
    synth::DatasetParams dp;
    dp.n_scenes = 2;
    dp.panos_per_scene = 4;
    dp.seed = 7;
    dp.scene.extent = 160.0;
    dp.render.overhead_size = 128;
    const std::string manifest = synth::make_dataset(dp, dir.string());

    const auto records = load_manifest(manifest);
    REQUIRE(records.size() == 2);

    // compare against the raw lines field by field
    std::ifstream in(manifest);
    std::string line;
    size_t i = 0;
    while (std::getline(in, line)) {
        const json j = json::parse(line);
        const SampleRecord& rec = records[i++];
        CHECK(rec.id == j.at("id").get<std::string>());
        CHECK(rec.satellite_path == j.at("satellite").at("path").get<std::string>());
        CHECK(rec.frame.center.lat == j.at("satellite").at("center").at("lat").get<double>());
        CHECK(rec.frame.center.lon == j.at("satellite").at("center").at("lon").get<double>());
        CHECK(rec.frame.gsd == j.at("satellite").at("gsd").get<double>());
        CHECK(rec.frame.size == j.at("satellite").at("size").get<int>());
        CHECK(rec.target.lat == j.at("target").at("lat").get<double>());
        CHECK(rec.target.lon == j.at("target").at("lon").get<double>());
        CHECK(rec.target_pano_path == j.at("target_pano_path").get<std::string>());
        CHECK(rec.seg_path == j.at("seg_path").get<std::string>());
        REQUIRE(rec.panoramas.size() == j.at("panoramas").size());

        // same multiset of panoramas, now sorted by distance
        std::set<std::string> want, got;
        for (const auto& p : j.at("panoramas")) want.insert(p.at("path").get<std::string>());
        for (const auto& p : rec.panoramas) got.insert(p.path);
        CHECK(want == got);
        for (size_t k = 1; k < rec.panoramas.size(); ++k)
            CHECK(rec.panoramas[k - 1].distance_m <= rec.panoramas[k].distance_m);
        for (const auto& p : rec.panoramas) {
            CHECK(p.distance_m == doctest::Approx(
                geo::haversine_distance(p.loc, rec.target)).epsilon(1e-12));
            CHECK(fs::exists(rec.resolve(p.path)));
        }
        CHECK(fs::exists(rec.resolve(rec.satellite_path)));
        CHECK(fs::exists(rec.resolve(rec.target_pano_path)));
        CHECK(fs::exists(rec.resolve(rec.seg_path)));
    }
    CHECK(i == records.size());
    fs::remove_all(dir);
}

TEST_CASE("load_manifest error paths carry locations") {
    const fs::path dir = fresh_dir("mvps_dataio_errors");
    const fs::path manifest = dir / "manifest.jsonl";

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_manifest((dir / "nope.jsonl").string()), IoError);
    }
    SUBCASE("empty file gives empty list") {
        write_text(manifest, "");
        CHECK(load_manifest(manifest.string()).empty());
    }
    SUBCASE("blank lines are skipped") {
        write_text(manifest, "\n  \n" + base_record("a").dump() + "\n\n");
        CHECK(load_manifest(manifest.string()).size() == 1);
    }
    SUBCASE("parse error names the line") {
        write_text(manifest, base_record("a").dump() + "\n{not json\n");
        try {
            load_manifest(manifest.string());
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }
    SUBCASE("missing field names the line and key") {
        json j = base_record("a");
        j.erase("target_pano_path");
        write_text(manifest, j.dump() + "\n");
        try {
            load_manifest(manifest.string());
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            const std::string msg = e.what();
            CHECK(msg.find(":1") != std::string::npos);
            CHECK(msg.find("target_pano_path") != std::string::npos);
        }
    }
    SUBCASE("target outside footprint names the id") {
        json j = base_record("far_away");
        j["target"]["lat"] = 40.71;  // ~1.1 km north of a 64 m half-footprint
        write_text(manifest, j.dump() + "\n");
        try {
            load_manifest(manifest.string());
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("far_away") != std::string::npos);
            CHECK(msg.find("footprint") != std::string::npos);
        }
    }
    SUBCASE("non-positive gsd rejected") {
        json j = base_record("a");
        j["satellite"]["gsd"] = 0.0;
        write_text(manifest, j.dump() + "\n");
        CHECK_THROWS_AS(load_manifest(manifest.string()), SchemaError);
    }
    SUBCASE("invalid latitude rejected") {
        json j = base_record("a");
        j["target"]["lat"] = 123.0;
        write_text(manifest, j.dump() + "\n");
        CHECK_THROWS_AS(load_manifest(manifest.string()), SchemaError);
    }
    fs::remove_all(dir);
}

TEST_CASE("nearest-K ordering matches a brute-force sort on 1000 random records") {
    const fs::path dir = fresh_dir("mvps_dataio_sort");
    const fs::path manifest = dir / "manifest.jsonl";

    Rng rng(424242);
    std::ostringstream lines;
    struct Expect {
        std::vector<std::string> order;  // paths in brute-force sorted order
    };
    std::vector<Expect> expected;

    for (int r = 0; r < 1000; ++r) {
        json j = base_record("rec_" + std::to_string(r));
        const double t_lat = 40.70 + rng.uniform(-1e-4, 1e-4);
        const double t_lon = -73.95 + rng.uniform(-1e-4, 1e-4);
        j["target"] = {{"lat", t_lat}, {"lon", t_lon}};
        j["satellite"]["center"] = {{"lat", t_lat}, {"lon", t_lon}};

        const int n = static_cast<int>(rng.uniform_index(8));
        std::vector<std::pair<double, std::string>> brute;
        for (int p = 0; p < n; ++p) {
            const double lat = t_lat + rng.uniform(-2e-4, 2e-4);
            const double lon = t_lon + rng.uniform(-2e-4, 2e-4);
            const std::string path = "p" + std::to_string(r) + "_" + std::to_string(p) + ".png";
            j["panoramas"].push_back({{"path", path}, {"lat", lat}, {"lon", lon}});
            brute.emplace_back(geo::haversine_distance({lat, lon}, {t_lat, t_lon}), path);
        }
        std::stable_sort(brute.begin(), brute.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        Expect e;
        for (const auto& [d, path] : brute) e.order.push_back(path);
        expected.push_back(std::move(e));
        lines << j.dump() << "\n";
    }
    write_text(manifest, lines.str());

    const auto records = load_manifest(manifest.string());
    REQUIRE(records.size() == expected.size());
    for (size_t r = 0; r < records.size(); ++r) {
        REQUIRE(records[r].panoramas.size() == expected[r].order.size());
        for (size_t p = 0; p < expected[r].order.size(); ++p)
            CHECK(records[r].panoramas[p].path == expected[r].order[p]);
    }
    fs::remove_all(dir);
}

TEST_CASE("select_conditions assembles fixed-shape inputs") {
    const fs::path dir = fresh_dir("mvps_dataio_cond");
    synth::DatasetParams dp;
    dp.n_scenes = 1;
    dp.panos_per_scene = 5;
    dp.seed = 11;
    dp.scene.extent = 160.0;
    dp.render.overhead_size = 128;
    const std::string manifest = synth::make_dataset(dp, dir.string());
    auto records = load_manifest(manifest);
    REQUIRE(records.size() == 1);
    SampleRecord rec = records[0];

    const int h = 32;
    SUBCASE("full record: two nearest chosen, nothing dropped") {
        const ConditionSet cs = select_conditions(rec, 2, h);
        CHECK(cs.prompt == std::string(kDefaultPrompt));
        CHECK(cs.satellite_tiled.height == h);
        CHECK(cs.satellite_tiled.width == 4 * h);
        REQUIRE(cs.panos.size() == 2);
        REQUIRE(cs.drop_mask.size() == 2);
        CHECK_FALSE(cs.drop_mask[0]);
        CHECK_FALSE(cs.drop_mask[1]);
        for (const auto& p : cs.panos) {
            CHECK(p.height == h);
            CHECK(p.width == 4 * h);
            CHECK(p.channels == 3);
        }
        // tiling repeats the square satellite exactly
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < h; ++x)
                for (int c = 0; c < 3; ++c) {
                    const uint8_t v = cs.satellite_tiled.at(y, x, c);
                    CHECK(cs.satellite_tiled.at(y, h + x, c) == v);
                    CHECK(cs.satellite_tiled.at(y, 2 * h + x, c) == v);
                    CHECK(cs.satellite_tiled.at(y, 3 * h + x, c) == v);
                }
        // nearest-neighbor keeps segmentation labels valid class ids
        REQUIRE_FALSE(cs.seg.empty());
        CHECK(cs.seg.height == h);
        CHECK(cs.seg.width == 4 * h);
        CHECK(cs.seg.channels == 1);
        for (uint8_t v : cs.seg.data) CHECK(v <= 3);
    }
    SUBCASE("one panorama pads the second slot") {
        rec.panoramas.resize(1);
        const ConditionSet cs = select_conditions(rec, 2, h);
        REQUIRE(cs.panos.size() == 2);
        CHECK_FALSE(cs.drop_mask[0]);
        CHECK(cs.drop_mask[1]);
        CHECK(cs.panos[1].height == h);
        CHECK(cs.panos[1].width == 4 * h);
        CHECK(std::all_of(cs.panos[1].data.begin(), cs.panos[1].data.end(),
                          [](uint8_t v) { return v == 0; }));
        CHECK(std::any_of(cs.panos[0].data.begin(), cs.panos[0].data.end(),
                          [](uint8_t v) { return v != 0; }));
    }
    SUBCASE("zero panoramas drop both slots") {
        rec.panoramas.clear();
        const ConditionSet cs = select_conditions(rec, 2, h);
        REQUIRE(cs.panos.size() == 2);
        CHECK(cs.drop_mask[0]);
        CHECK(cs.drop_mask[1]);
        for (const auto& p : cs.panos) {
            CHECK(p.height == h);
            CHECK(p.width == 4 * h);
            CHECK(std::all_of(p.data.begin(), p.data.end(),
                              [](uint8_t v) { return v == 0; }));
        }
    }
    SUBCASE("no segmentation leaves seg empty") {
        rec.seg_path.clear();
        const ConditionSet cs = select_conditions(rec, 2, h);
        CHECK(cs.seg.empty());
    }
    fs::remove_all(dir);
}

TEST_CASE("select_attention_set returns up to n nearest, sorted") {
    const fs::path dir = fresh_dir("mvps_dataio_attn");
    synth::DatasetParams dp;
    dp.n_scenes = 1;
    dp.panos_per_scene = 25;
    dp.seed = 3;
    dp.scene.extent = 160.0;
    dp.render.overhead_size = 128;
    const std::string manifest = synth::make_dataset(dp, dir.string());
    auto records = load_manifest(manifest);
    REQUIRE(records.size() == 1);
    const SampleRecord& rec = records[0];
    REQUIRE(rec.panoramas.size() == 25);

    const auto twenty = select_attention_set(rec, 20, 16);
    REQUIRE(twenty.size() == 20);
    for (size_t i = 0; i < twenty.size(); ++i) {
        CHECK(twenty[i].distance_m == rec.panoramas[i].distance_m);
        CHECK(twenty[i].image.height == 16);
        CHECK(twenty[i].image.width == 64);
        if (i > 0) CHECK(twenty[i - 1].distance_m <= twenty[i].distance_m);
    }
    // the 20 chosen are the nearest: every excluded one is at least as far
    for (size_t i = 20; i < rec.panoramas.size(); ++i)
        CHECK(rec.panoramas[i].distance_m >= twenty.back().distance_m);

    SampleRecord small = rec;
    small.panoramas.resize(3);
    CHECK(select_attention_set(small, 20, 16).size() == 3);
    fs::remove_all(dir);
}

TEST_CASE("make_splits partitions the manifest") {
    std::vector<SampleRecord> records(23);
    for (size_t i = 0; i < records.size(); ++i) records[i].id = "r" + std::to_string(i);

    const SplitSpec s = make_splits(records, 0.2, 0.1, 5);
    CHECK(s.val.size() == 5);   // round(0.2 * 23)
    CHECK(s.test.size() == 2);  // round(0.1 * 23)
    CHECK(s.train.size() == 16);

    std::set<std::string> all;
    for (const auto& id : s.train) all.insert(id);
    for (const auto& id : s.val) all.insert(id);
    for (const auto& id : s.test) all.insert(id);
    CHECK(all.size() == records.size());  // disjoint and covering

    const SplitSpec again = make_splits(records, 0.2, 0.1, 5);
    CHECK(again.train == s.train);
    CHECK(again.val == s.val);
    CHECK(again.test == s.test);

    const SplitSpec other = make_splits(records, 0.2, 0.1, 6);
    CHECK(other.train != s.train);  // seed matters

    CHECK_THROWS_AS(make_splits(records, 0.6, 0.5, 0), SchemaError);
    CHECK_THROWS_AS(make_splits(records, -0.1, 0.1, 0), SchemaError);

    const SplitSpec empty = make_splits({}, 0.2, 0.1, 0);
    CHECK(empty.train.empty());
    CHECK(empty.val.empty());
    CHECK(empty.test.empty());
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    const fs::path dir = fresh_dir("mvps_dataio_ckpt");
    const std::string path = (dir / "model.ckpt").string();

    nn::ParamStore store(17);
    nn::Conv2d conv(store, "enc.conv", 3, 8, 3);
    nn::Linear lin(store, "head", 8, 4);
    nn::BatchNorm2d bn(store, "bn", 8);
    nn::AdamW opt(store, {.lr = 1e-3f});

    // take a few steps so moments and running stats are nontrivial
    Rng rng(5);
    for (int step = 0; step < 3; ++step) {
        store.zero_grad();
        nn::Tensor x = nn::randn({2, 3, 8, 8}, rng, 1.0f);
        nn::Tensor y = bn(conv(x), true);
        nn::Tensor loss = nn::mse_loss(y, nn::Tensor::zeros(y.shape()));
        loss.backward();
        opt.step();
    }

    const CheckpointData snap =
        snapshot_state(store, &opt, &rng, Config().dump(), 3);
    save_checkpoint(snap, path);

    const CheckpointData back = load_checkpoint(path);
    CHECK(back.step == 3);
    CHECK(back.config_json == snap.config_json);
    CHECK(back.has_optimizer);
    CHECK(back.opt_step == 3);
    CHECK(back.has_rng);
    CHECK(back.rng_state == rng.serialize_state());
    REQUIRE(back.params.size() == snap.params.size());
    for (const auto& [name, entry] : snap.params) {
        REQUIRE(back.params.count(name) == 1);
        CHECK(back.params.at(name).first == entry.first);
        CHECK(back.params.at(name).second == entry.second);  // exact float bits
    }
    REQUIRE(back.buffers.size() == snap.buffers.size());
    for (const auto& [name, entry] : snap.buffers)
        CHECK(back.buffers.at(name).second == entry.second);
    for (const auto& [name, slot] : snap.opt_state) {
        CHECK(back.opt_state.at(name).m == slot.m);
        CHECK(back.opt_state.at(name).v == slot.v);
    }

    SUBCASE("save -> load -> save produces identical bytes") {
        const std::string second = (dir / "again.ckpt").string();
        save_checkpoint(back, second);
        CHECK(read_bytes(path) == read_bytes(second));
    }

    SUBCASE("restore_state puts values back into a fresh model") {
        nn::ParamStore store2(999);  // different seed: different init
        nn::Conv2d conv2(store2, "enc.conv", 3, 8, 3);
        nn::Linear lin2(store2, "head", 8, 4);
        nn::BatchNorm2d bn2(store2, "bn", 8);
        nn::AdamW opt2(store2, {.lr = 1e-3f});
        Rng rng2(0);

        restore_state(back, store2, &opt2, &rng2);
        for (const auto& name : store.param_names())
            CHECK(store2.get_param(name).values() == store.get_param(name).values());
        for (const auto& name : store.buffer_names())
            CHECK(store2.get_buffer(name).values() == store.get_buffer(name).values());
        CHECK(opt2.step_count() == 3);
        CHECK(rng2.serialize_state() == rng.serialize_state());
    }

    SUBCASE("truncated file is a corruption error") {
        const std::string bytes = read_bytes(path);
        for (const size_t keep : {bytes.size() - 1, bytes.size() / 2, size_t{5}}) {
            const std::string cut = (dir / "cut.ckpt").string();
            std::ofstream out(cut, std::ios::binary | std::ios::trunc);
            out.write(bytes.data(), static_cast<std::streamsize>(keep));
            out.close();
            CHECK_THROWS_AS(load_checkpoint(cut), CheckpointError);
        }
    }

    SUBCASE("flipped payload byte is a corruption error") {
        std::string bytes = read_bytes(path);
        bytes[bytes.size() / 2] ^= 0x01;
        const std::string bad = (dir / "bad.ckpt").string();
        std::ofstream(bad, std::ios::binary) << bytes;
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }

    SUBCASE("version bump is rejected even with a valid checksum") {
        std::string bytes = read_bytes(path);
        bytes[8] = 2;  // version field follows the 8-byte magic
        const uint32_t crc = static_cast<uint32_t>(
            crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
                  static_cast<uInt>(bytes.size() - 4)));
        std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
        const std::string bad = (dir / "v2.ckpt").string();
        std::ofstream(bad, std::ios::binary) << bytes;
        try {
            load_checkpoint(bad);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("config tree: defaults, files, overrides, validation") {
    Config cfg;

    SUBCASE("every module knob is present") {
        CHECK(cfg.get<int>("data.k_conditions") == 2);
        CHECK(cfg.get<int>("data.attention_n") == 20);
        CHECK(cfg.get<std::string>("data.resize_filter") == "bilinear");
        CHECK(cfg.get<std::string>("data.prompt") ==
              "A high-resolution street-view panorama");
        CHECK(cfg.get<double>("model.distance_scale") == 100.0);
        CHECK(cfg.get<std::string>("model.latent_codec") == "s2d48");
        CHECK(cfg.get<int>("train.timesteps") == 1000);
        CHECK(cfg.get<double>("train.lr") == 2e-5);
        CHECK(cfg.get<double>("train.p_keep_all") == 0.3);
        CHECK(cfg.get<double>("train.p_drop_all") == 0.1);
        CHECK(cfg.get<int>("sample.steps") == 50);
        CHECK(cfg.get<double>("sample.cfg_scale") == 7.5);
        CHECK(cfg.get<std::vector<int>>("model.channel_multipliers") ==
              std::vector<int>{1, 2, 3, 4});
    }

    SUBCASE("file merge keeps unmentioned defaults") {
        const fs::path dir = fresh_dir("mvps_dataio_cfg");
        const fs::path file = dir / "run.json";
        write_text(file, R"({"train": {"lr": 0.001, "steps": 2000}, "seed": 9})");
        const Config c = Config::from_file(file.string());
        CHECK(c.get<double>("train.lr") == 0.001);
        CHECK(c.get<int>("train.steps") == 2000);
        CHECK(c.get<int>("seed") == 9);
        CHECK(c.get<double>("train.weight_decay") == 0.01);  // untouched
        fs::remove_all(dir);
    }

    SUBCASE("unknown keys and type errors are rejected") {
        const fs::path dir = fresh_dir("mvps_dataio_cfg2");
        const fs::path file = dir / "run.json";
        write_text(file, R"({"train": {"learning_rate": 0.001}})");
        CHECK_THROWS_AS(Config::from_file(file.string()), SchemaError);
        write_text(file, R"({"trainer": {}})");
        CHECK_THROWS_AS(Config::from_file(file.string()), SchemaError);
        write_text(file, R"({"train": {"lr": "fast"}})");
        CHECK_THROWS_AS(Config::from_file(file.string()), SchemaError);
        write_text(file, R"({"data": {"prompt": 3}})");
        CHECK_THROWS_AS(Config::from_file(file.string()), SchemaError);
        write_text(file, "{broken");
        CHECK_THROWS_AS(Config::from_file(file.string()), SchemaError);
        CHECK_THROWS_AS(Config::from_file((dir / "missing.json").string()), IoError);
        fs::remove_all(dir);
    }

    SUBCASE("overrides parse JSON values and fall back to strings") {
        cfg.apply_override("train.lr=0.01");
        CHECK(cfg.get<double>("train.lr") == 0.01);
        cfg.apply_override("data.resize_filter=area");
        CHECK(cfg.get<std::string>("data.resize_filter") == "area");
        cfg.apply_override("seed=42");
        CHECK(cfg.get<int>("seed") == 42);
        cfg.apply_override("model.channel_multipliers=[1,2,4,4]");
        CHECK(cfg.get<std::vector<int>>("model.channel_multipliers") ==
              std::vector<int>{1, 2, 4, 4});
        CHECK_THROWS_AS(cfg.apply_override("train.nope=1"), SchemaError);
        CHECK_THROWS_AS(cfg.apply_override("no_equals_sign"), SchemaError);
        CHECK_THROWS_AS(cfg.apply_override("=5"), SchemaError);
    }

    SUBCASE("unknown dotted path throws on read") {
        CHECK_THROWS_AS(cfg.get<int>("train.missing"), SchemaError);
        CHECK_THROWS_AS(cfg.get<int>("nowhere"), SchemaError);
    }

    SUBCASE("dump -> parse -> merge round-trips") {
        cfg.apply_override("train.lr=0.5");
        Config c2;
        c2.merge(json::parse(cfg.dump()));
        CHECK(c2.get<double>("train.lr") == 0.5);
        CHECK(c2.dump() == cfg.dump());
    }
}
