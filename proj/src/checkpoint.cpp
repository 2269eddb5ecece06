#include "pairlora/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "pairlora/denoiser.hpp"

namespace pairlora {

namespace {

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

uint64_t fnv1a64(const uint8_t* data, size_t n, uint64_t h = kFnvOffset) {
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= kFnvPrime;
    }
    return h;
}

struct Writer {
    std::vector<uint8_t> buf;
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void i64(int64_t v) { bytes(&v, 8); }
    void f64(double v) { bytes(&v, 8); }
    void str(const std::string& s) {
        u32(uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;
    void bytes(void* p, size_t n) {
        if (pos + n > buf.size())
            tensor_fail("checkpoint: file truncated (wanted " + std::to_string(n) + " bytes at " +
                        std::to_string(pos) + " of " + std::to_string(buf.size()) + ")");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
    uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
    int64_t i64() { int64_t v; bytes(&v, 8); return v; }
    double f64() { double v; bytes(&v, 8); return v; }
    std::string str() {
        uint32_t n = u32();
        if (n > (1u << 20)) tensor_fail("checkpoint: implausible string length");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

}  // namespace

int64_t CheckpointMeta::geti(const std::string& k) const {
    auto it = ints.find(k);
    if (it == ints.end()) tensor_fail("checkpoint meta: missing int key '" + k + "'");
    return it->second;
}

double CheckpointMeta::getf(const std::string& k) const {
    auto it = floats.find(k);
    if (it == floats.end()) tensor_fail("checkpoint meta: missing float key '" + k + "'");
    return it->second;
}

const std::string& CheckpointMeta::gets(const std::string& k) const {
    auto it = strings.find(k);
    if (it == strings.end()) tensor_fail("checkpoint meta: missing string key '" + k + "'");
    return it->second;
}

const CheckpointTensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t;
    tensor_fail("checkpoint: no tensor named '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return true;
    return false;
}

std::vector<uint8_t> checkpoint_to_bytes(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.u32(ckpt.kind);

    w.u32(uint32_t(ckpt.meta.ints.size()));
    for (const auto& [k, v] : ckpt.meta.ints) { w.str(k); w.i64(v); }
    w.u32(uint32_t(ckpt.meta.floats.size()));
    for (const auto& [k, v] : ckpt.meta.floats) { w.str(k); w.f64(v); }
    w.u32(uint32_t(ckpt.meta.strings.size()));
    for (const auto& [k, v] : ckpt.meta.strings) { w.str(k); w.str(v); }

    // parameter table: name, shape, payload offset (in floats), numel
    w.u32(uint32_t(ckpt.tensors.size()));
    uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        w.str(t.name);
        w.u32(uint32_t(t.shape.size()));
        for (int d : t.shape) w.u32(uint32_t(d));
        w.u64(offset);
        w.u64(uint64_t(t.data.size()));
        offset += t.data.size();
    }

    w.u64(offset * 4);  // payload byte count
    for (const auto& t : ckpt.tensors) w.bytes(t.data.data(), t.data.size() * 4);

    w.u64(fnv1a64(w.buf.data(), w.buf.size()));
    return std::move(w.buf);
}

Checkpoint checkpoint_from_bytes(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8 + 4 + 4 + 8)
        tensor_fail("checkpoint: file too small to be a PAIRLORA checkpoint");
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    uint64_t computed = fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored != computed) tensor_fail("checkpoint: checksum mismatch (corrupt or truncated file)");

    Reader r{bytes};
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        tensor_fail("checkpoint: bad magic (not a PAIRLORA file)");
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        tensor_fail("checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.kind = r.u32();

    uint32_t ni = r.u32();
    for (uint32_t i = 0; i < ni; ++i) { std::string k = r.str(); ckpt.meta.ints[k] = r.i64(); }
    uint32_t nf = r.u32();
    for (uint32_t i = 0; i < nf; ++i) { std::string k = r.str(); ckpt.meta.floats[k] = r.f64(); }
    uint32_t ns = r.u32();
    for (uint32_t i = 0; i < ns; ++i) { std::string k = r.str(); ckpt.meta.strings[k] = r.str(); }

    uint32_t nt = r.u32();
    struct Entry { std::string name; std::vector<int> shape; uint64_t offset, numel; };
    std::vector<Entry> entries;
    for (uint32_t i = 0; i < nt; ++i) {
        Entry e;
        e.name = r.str();
        uint32_t nd = r.u32();
        for (uint32_t d = 0; d < nd; ++d) e.shape.push_back(int(r.u32()));
        e.offset = r.u64();
        e.numel = r.u64();
        entries.push_back(std::move(e));
    }
    uint64_t payload_bytes = r.u64();
    size_t payload_start = r.pos;
    if (payload_start + payload_bytes + 8 != bytes.size())
        tensor_fail("checkpoint: payload size mismatch");

    for (auto& e : entries) {
        if (shape_numel(e.shape) != int64_t(e.numel))
            tensor_fail("checkpoint: tensor '" + e.name + "' shape/numel mismatch");
        if ((e.offset + e.numel) * 4 > payload_bytes)
            tensor_fail("checkpoint: tensor '" + e.name + "' extends past payload");
        CheckpointTensor t;
        t.name = e.name;
        t.shape = e.shape;
        t.data.resize(e.numel);
        std::memcpy(t.data.data(), bytes.data() + payload_start + e.offset * 4, e.numel * 4);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    auto bytes = checkpoint_to_bytes(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) tensor_fail("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) tensor_fail("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) tensor_fail("checkpoint: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return checkpoint_from_bytes(bytes);
}

void save_denoiser(const Denoiser& model, const std::string& path,
                   const CheckpointMeta& extra_meta) {
    Checkpoint ckpt;
    ckpt.kind = kCheckpointKindModel;
    ckpt.meta = extra_meta;
    const auto& cfg = model.config();
    ckpt.meta.ints["img_res"] = cfg.img_res;
    ckpt.meta.ints["img_channels"] = cfg.img_channels;
    ckpt.meta.ints["base_channels"] = cfg.base_channels;
    ckpt.meta.ints["time_embed_dim"] = cfg.time_embed_dim;
    ckpt.meta.ints["prompt_embed_dim"] = cfg.prompt_embed_dim;
    ckpt.meta.ints["schedule_T"] = cfg.schedule_T;
    ckpt.meta.ints["vocab_size"] = cfg.vocab_size;
    ckpt.meta.ints["prompt_len"] = cfg.prompt_len;
    ckpt.meta.strings["arch"] = cfg.arch_tag();
    for (const auto* p : model.params()) {
        CheckpointTensor t;
        t.name = p->name;
        t.shape = p->value.shape();
        t.data.assign(p->value.data().begin(), p->value.data().end());
        ckpt.tensors.push_back(std::move(t));
    }
    save_checkpoint(path, ckpt);
}

std::unique_ptr<Denoiser> load_denoiser(const std::string& path, CheckpointMeta* meta_out) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.kind != kCheckpointKindModel)
        tensor_fail("checkpoint: '" + path + "' is not a model checkpoint");
    DenoiserConfig cfg;
    cfg.img_res = int(ckpt.meta.geti("img_res"));
    cfg.img_channels = int(ckpt.meta.geti("img_channels"));
    cfg.base_channels = int(ckpt.meta.geti("base_channels"));
    cfg.time_embed_dim = int(ckpt.meta.geti("time_embed_dim"));
    cfg.prompt_embed_dim = int(ckpt.meta.geti("prompt_embed_dim"));
    cfg.schedule_T = int(ckpt.meta.geti("schedule_T"));
    cfg.vocab_size = int(ckpt.meta.geti("vocab_size"));
    cfg.prompt_len = int(ckpt.meta.geti("prompt_len"));
    auto model = std::make_unique<Denoiser>(cfg, 0);
    for (auto* p : model->params()) {
        const auto& t = ckpt.tensor(p->name);
        if (t.shape != p->value.shape())
            tensor_fail("checkpoint: tensor '" + p->name + "' shape " + shape_str(t.shape) +
                        " does not match model " + shape_str(p->value.shape()));
        std::copy(t.data.begin(), t.data.end(), p->value.data().begin());
    }
    if (meta_out) *meta_out = ckpt.meta;
    return model;
}

}  // namespace pairlora
