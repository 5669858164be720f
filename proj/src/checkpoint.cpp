#include "mvps/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <zlib.h>

#include "mvps/errors.hpp"

namespace mvps::data {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'P', 'S', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

// All integers little-endian. Layout:
//   magic[8] u32:version u64:step str:config
//   u64:n_params { str:name u32:ndim i32:dims[] u64:numel f32:data[] }*
//   u64:n_buffers (same entry layout)
//   u8:has_opt [ u64:opt_step u64:n { str:name u64:len f32:m[] f32:v[] }* ]
//   u8:has_rng [ str:state ]
//   u32:crc32 of everything before it

struct Writer {
    std::string out;

    void raw(const void* p, size_t n) { out.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void i32(int32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void floats(const std::vector<float>& v) { raw(v.data(), v.size() * sizeof(float)); }
};

struct Reader {
    const char* p;
    const char* end;
    std::string where;

    void need(size_t n) const {
        if (static_cast<size_t>(end - p) < n)
            throw CheckpointError("truncated checkpoint: " + where);
    }
    void raw(void* out, size_t n) {
        need(n);
        std::memcpy(out, p, n);
        p += n;
    }
    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    int32_t i32() {
        int32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const uint64_t n = u64();
        need(n);
        std::string s(p, p + n);
        p += n;
        return s;
    }
    std::vector<float> floats(uint64_t n) {
        need(n * sizeof(float));
        std::vector<float> v(n);
        std::memcpy(v.data(), p, n * sizeof(float));
        p += n * sizeof(float);
        return v;
    }
};

void write_tensor_map(Writer& w,
                      const std::map<std::string, std::pair<nn::Shape, std::vector<float>>>& m) {
    w.u64(m.size());
    for (const auto& [name, entry] : m) {
        w.str(name);
        w.u32(static_cast<uint32_t>(entry.first.size()));
        for (int d : entry.first) w.i32(d);
        w.u64(entry.second.size());
        w.floats(entry.second);
    }
}

std::map<std::string, std::pair<nn::Shape, std::vector<float>>> read_tensor_map(Reader& r) {
    std::map<std::string, std::pair<nn::Shape, std::vector<float>>> m;
    const uint64_t count = r.u64();
    for (uint64_t i = 0; i < count; ++i) {
        std::string name = r.str();
        const uint32_t ndim = r.u32();
        if (ndim > 8) throw CheckpointError("corrupt checkpoint (tensor rank): " + r.where);
        nn::Shape shape(ndim);
        for (auto& d : shape) d = r.i32();
        const uint64_t numel = r.u64();
        m.emplace(std::move(name), std::make_pair(std::move(shape), r.floats(numel)));
    }
    return m;
}

}  // namespace

void save_checkpoint(const CheckpointData& data, const std::string& path) {
    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kVersion);
    w.u64(data.step);
    w.str(data.config_json);
    write_tensor_map(w, data.params);
    write_tensor_map(w, data.buffers);
    w.u8(data.has_optimizer ? 1 : 0);
    if (data.has_optimizer) {
        w.u64(data.opt_step);
        w.u64(data.opt_state.size());
        for (const auto& [name, slot] : data.opt_state) {
            w.str(name);
            w.u64(slot.m.size());
            w.floats(slot.m);
            w.floats(slot.v);
        }
    }
    w.u8(data.has_rng ? 1 : 0);
    if (data.has_rng) w.str(data.rng_state);

    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(w.out.data()),
              static_cast<uInt>(w.out.size())));
    w.u32(crc);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint: " + tmp);
        out.write(w.out.data(), static_cast<std::streamsize>(w.out.size()));
        if (!out) throw IoError("short write on checkpoint: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + path + " (" + ec.message() + ")");
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::string bytes(static_cast<size_t>(size), '\0');
    if (!in.read(bytes.data(), size)) throw IoError("cannot read checkpoint: " + path);

    if (bytes.size() < sizeof(kMagic) + 4)
        throw CheckpointError("truncated checkpoint: " + path);
    const uint32_t expected = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size() - 4)));
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    if (stored != expected)
        throw CheckpointError("corrupt or truncated checkpoint (checksum mismatch): " + path);

    Reader r{bytes.data(), bytes.data() + bytes.size() - 4, path};
    char magic[sizeof(kMagic)];
    r.raw(magic, sizeof(kMagic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(kVersion) + "): " + path);

    CheckpointData data;
    data.step = r.u64();
    data.config_json = r.str();
    data.params = read_tensor_map(r);
    data.buffers = read_tensor_map(r);
    data.has_optimizer = r.u8() != 0;
    if (data.has_optimizer) {
        data.opt_step = r.u64();
        const uint64_t count = r.u64();
        for (uint64_t i = 0; i < count; ++i) {
            std::string name = r.str();
            const uint64_t n = r.u64();
            nn::AdamW::Slot slot;
            slot.m = r.floats(n);
            slot.v = r.floats(n);
            data.opt_state.emplace(std::move(name), std::move(slot));
        }
    }
    data.has_rng = r.u8() != 0;
    if (data.has_rng) data.rng_state = r.str();
    if (r.p != r.end)
        throw CheckpointError("corrupt checkpoint (trailing bytes): " + path);
    return data;
}

CheckpointData snapshot_state(const nn::ParamStore& store, const nn::AdamW* opt,
                              const Rng* rng, const std::string& config_json, uint64_t step) {
    CheckpointData data;
    data.config_json = config_json;
    data.step = step;
    for (const auto& name : store.param_names()) {
        const nn::Tensor t = store.get_param(name);
        data.params.emplace(name, std::make_pair(t.shape(), t.values()));
    }
    for (const auto& name : store.buffer_names()) {
        const nn::Tensor t = store.get_buffer(name);
        data.buffers.emplace(name, std::make_pair(t.shape(), t.values()));
    }
    if (opt) {
        data.has_optimizer = true;
        data.opt_step = static_cast<uint64_t>(opt->step_count());
        data.opt_state = opt->state();
    }
    if (rng) {
        data.has_rng = true;
        data.rng_state = rng->serialize_state();
    }
    return data;
}

void restore_state(const CheckpointData& data, nn::ParamStore& store, nn::AdamW* opt, Rng* rng) {
    for (const auto& [name, entry] : data.params) store.set_param_values(name, entry.second);
    for (const auto& [name, entry] : data.buffers) store.set_buffer_values(name, entry.second);
    if (opt && data.has_optimizer) {
        opt->set_step_count(static_cast<int64_t>(data.opt_step));
        opt->state() = data.opt_state;
    }
    if (rng && data.has_rng) rng->restore_state(data.rng_state);
}

}  // namespace mvps::data
