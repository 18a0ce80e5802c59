#include "hkd/persist.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "hkd/config.hpp"
#include "hkd/netarch.hpp"

namespace hkd {

namespace {

constexpr uint64_t kMaxPayload = uint64_t(4) << 30;  // declared sizes beyond 4 GiB are rejected

class Writer {
public:
    explicit Writer(const std::string& path) : final_path_(path), tmp_path_(path + ".tmp") {
        f_ = std::fopen(tmp_path_.c_str(), "wb");
        if (!f_) throw io_error("cannot open " + tmp_path_ + " for writing");
    }
    ~Writer() {
        if (f_) {
            std::fclose(f_);
            std::remove(tmp_path_.c_str());
        }
    }

    void bytes(const void* p, size_t n) {
        if (std::fwrite(p, 1, n, f_) != n) throw io_error("short write to " + tmp_path_);
    }
    void u8(uint8_t v) { bytes(&v, 1); }
    void u32(uint32_t v) {
        uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
        bytes(b, 4);
    }
    void u64(uint64_t v) {
        uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = uint8_t(v >> (8 * i));
        bytes(b, 8);
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void f32_array(const float* p, size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            bytes(p, n * 4);
        } else {
            for (size_t i = 0; i < n; ++i) f32(p[i]);
        }
    }
    void str(const std::string& s) {
        if (s.size() > std::numeric_limits<uint32_t>::max())
            throw format_error("string too long to serialize");
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void commit() {
        if (std::fflush(f_) != 0) throw io_error("flush failed for " + tmp_path_);
        std::fclose(f_);
        f_ = nullptr;
        if (std::rename(tmp_path_.c_str(), final_path_.c_str()) != 0) {
            std::remove(tmp_path_.c_str());
            throw io_error("cannot rename " + tmp_path_ + " to " + final_path_);
        }
    }

private:
    std::string final_path_, tmp_path_;
    std::FILE* f_ = nullptr;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw io_error("cannot open " + path + " for reading");
        std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        buf_.assign(s.begin(), s.end());
    }

    size_t offset() const { return off_; }
    size_t remaining() const { return buf_.size() - off_; }

    [[noreturn]] void fail(const std::string& what) const {
        throw corruption_error(path_ + ": " + what + " at byte offset " + std::to_string(off_));
    }

    const uint8_t* bytes(size_t n) {
        if (remaining() < n)
            fail("truncated file, need " + std::to_string(n) + " bytes but only " +
                 std::to_string(remaining()) + " remain");
        const uint8_t* p = buf_.data() + off_;
        off_ += n;
        return p;
    }
    uint8_t u8() { return *bytes(1); }
    uint32_t u32() {
        const uint8_t* b = bytes(4);
        return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
    }
    uint64_t u64() {
        const uint8_t* b = bytes(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    void f32_array(float* out, size_t n) {
        const uint8_t* b = bytes(n * 4);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out, b, n * 4);
        } else {
            for (size_t i = 0; i < n; ++i) {
                uint32_t v = uint32_t(b[4 * i]) | uint32_t(b[4 * i + 1]) << 8 |
                             uint32_t(b[4 * i + 2]) << 16 | uint32_t(b[4 * i + 3]) << 24;
                out[i] = std::bit_cast<float>(v);
            }
        }
    }
    std::string str() {
        uint32_t n = u32();
        if (n > kMaxPayload) fail("declared string length " + std::to_string(n) + " too large");
        const uint8_t* p = bytes(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    void expect_magic(const char (&magic)[5]) {
        const uint8_t* p = bytes(4);
        if (std::memcmp(p, magic, 4) != 0)
            throw corruption_error(path_ + ": bad magic at byte offset 0, expected '" +
                                   std::string(magic, 4) + "'");
    }
    void expect_eof() {
        if (remaining() != 0)
            fail(std::to_string(remaining()) + " trailing bytes after payload");
    }

private:
    std::string path_;
    std::vector<uint8_t> buf_;
    size_t off_ = 0;
};

constexpr uint32_t kDatasetVersion = 1;
constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

const Tensor& Checkpoint::param(const std::string& name) const {
    for (const auto& [n, t] : params)
        if (n == name) return t;
    throw format_error("checkpoint has no parameter named '" + name + "'");
}

void write_dataset(const TrajectoryDataset& ds, const std::string& path) {
    ds.validate();
    Writer w(path);
    w.bytes("HKDT", 4);
    w.u32(kDatasetVersion);
    w.u32(static_cast<uint32_t>(ds.n_traj));
    w.u32(static_cast<uint32_t>(ds.n_grid()));
    w.u32(static_cast<uint32_t>(ds.C));
    w.u32(static_cast<uint32_t>(ds.H));
    w.u32(static_cast<uint32_t>(ds.W));
    w.f32(ds.schedule.epsilon);
    w.f32(ds.schedule.horizon);
    w.u8(ds.schedule_tag);
    w.u64(ds.seed);
    w.f32_array(ds.times.data(), ds.times.size());
    w.f32_array(ds.states.data(), ds.states.size());
    w.commit();
}

TrajectoryDataset read_dataset(const std::string& path) {
    Reader r(path);
    r.expect_magic("HKDT");
    uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw unsupported_version_error(path + ": dataset format version " +
                                        std::to_string(version) + " not supported (expected " +
                                        std::to_string(kDatasetVersion) + ")");
    TrajectoryDataset ds;
    uint32_t n_traj = r.u32();
    uint32_t n_grid = r.u32();
    uint32_t C = r.u32(), H = r.u32(), W = r.u32();
    ds.schedule.epsilon = r.f32();
    ds.schedule.horizon = r.f32();
    ds.schedule_tag = r.u8();
    if (ds.schedule_tag != 1) r.fail("unknown schedule tag " + std::to_string(ds.schedule_tag));
    ds.seed = r.u64();
    uint64_t state_count = uint64_t(n_traj) * n_grid * C * H * W;
    if (n_traj == 0 || n_grid == 0 || C == 0 || H == 0 || W == 0)
        r.fail("zero dimension in dataset header");
    if (state_count * 4 > kMaxPayload || uint64_t(n_grid) * 4 > kMaxPayload)
        r.fail("declared payload of " + std::to_string(state_count * 4) +
               " bytes exceeds the 4 GiB limit");
    ds.n_traj = static_cast<int>(n_traj);
    ds.C = static_cast<int>(C);
    ds.H = static_cast<int>(H);
    ds.W = static_cast<int>(W);
    ds.times.resize(n_grid);
    r.f32_array(ds.times.data(), n_grid);
    ds.states.resize(state_count);
    r.f32_array(ds.states.data(), state_count);
    r.expect_eof();
    ds.validate();
    return ds;
}

void write_checkpoint(const Checkpoint& ck, const std::string& path) {
    Writer w(path);
    w.bytes("HKDC", 4);
    w.u32(kCheckpointVersion);
    w.str(ck.config_echo);
    w.u32(static_cast<uint32_t>(ck.params.size()));
    for (const auto& [name, t] : ck.params) {
        w.str(name);
        const auto& shape = t.shape();
        w.u32(static_cast<uint32_t>(shape.size()));
        for (int d : shape) w.u32(static_cast<uint32_t>(d));
        w.f32_array(t.data(), t.vec().size());
    }
    w.commit();
}

Checkpoint read_checkpoint(const std::string& path) {
    Reader r(path);
    r.expect_magic("HKDC");
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw unsupported_version_error(path + ": checkpoint format version " +
                                        std::to_string(version) + " not supported (expected " +
                                        std::to_string(kCheckpointVersion) + ")");
    Checkpoint ck;
    ck.config_echo = r.str();
    uint32_t n_params = r.u32();
    for (uint32_t i = 0; i < n_params; ++i) {
        std::string name = r.str();
        uint32_t rank = r.u32();
        if (rank > 8) r.fail("parameter '" + name + "' declares rank " + std::to_string(rank));
        Shape shape(rank);
        uint64_t count = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint32_t dim = r.u32();
            if (dim == 0) r.fail("parameter '" + name + "' has a zero dimension");
            if (dim > uint32_t(std::numeric_limits<int>::max()))
                r.fail("parameter '" + name + "' dimension overflows int");
            shape[d] = static_cast<int>(dim);
            count *= dim;
            if (count * 4 > kMaxPayload)
                r.fail("parameter '" + name + "' declares " + std::to_string(count * 4) +
                       " bytes, exceeding the 4 GiB limit");
        }
        std::vector<float> data(count);
        r.f32_array(data.data(), count);
        ck.params.emplace_back(name, Tensor::from_data(shape, std::move(data)));
    }
    r.expect_eof();

    RunConfig run = RunConfig::from_text(ck.config_echo);
    ModelConfig mcfg = model_config_from(run);
    HkdModel reference(mcfg);
    if (reference.params().size() != ck.params.size())
        throw format_error(path + ": checkpoint has " + std::to_string(ck.params.size()) +
                           " parameters but the echoed configuration implies " +
                           std::to_string(reference.params().size()));
    for (const auto& [name, expected] : reference.params()) {
        const Tensor* found = nullptr;
        for (const auto& [n, t] : ck.params)
            if (n == name) found = &t;
        if (!found) throw format_error(path + ": missing parameter '" + name + "'");
        if (found->shape() != expected.shape())
            throw format_error(path + ": parameter '" + name + "' has shape " +
                               shape_str(found->shape()) + " but the echoed configuration " +
                               "implies " + shape_str(expected.shape()));
    }
    return ck;
}

}  // namespace hkd
