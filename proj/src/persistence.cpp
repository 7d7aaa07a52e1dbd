// SPDX-License-Identifier: Apache-2.0
#include "bdris/persistence.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace bdris {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

constexpr double kRoundTripTolerance = 1e-9;

class Writer {
public:
    template <typename T>
    void pod(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.append(buf, sizeof(T));
    }
    void u32(std::uint64_t v) { pod(static_cast<std::uint32_t>(v)); }
    void u64(std::uint64_t v) { pod(static_cast<std::uint64_t>(v)); }
    void f64(double v) { pod(v); }
    void magic(const char* m) { out_.append(m, 4); }
    void str(const std::string& s) {
        u32(s.size());
        out_.append(s);
    }
    // Row-major real block, then row-major imaginary block.
    void cmatrix(const CMatrix& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c).real());
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c).imag());
    }
    void f64s(const std::vector<double>& v) {
        for (double x : v) f64(x);
    }
    void rmatrix(const RMatrix& m) {
        u32(m.rows());
        u32(m.cols());
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}
    template <typename T>
    T pod() {
        if (pos_ + sizeof(T) > bytes_.size()) throw FormatError("unexpected end of file");
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::size_t u32() { return pod<std::uint32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    double f64() { return pod<double>(); }
    void magic(const char* m) {
        if (bytes_.size() < pos_ + 4 || bytes_.compare(pos_, 4, m) != 0)
            throw FormatError(std::string("bad magic, expected ") + m);
        pos_ += 4;
    }
    std::string str() {
        const std::size_t n = u32();
        if (pos_ + n > bytes_.size()) throw FormatError("unexpected end of file");
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    CMatrix cmatrix(std::size_t rows, std::size_t cols) {
        CMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c).real(f64());
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c).imag(f64());
        return m;
    }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }
    RMatrix rmatrix() {
        const std::size_t rows = u32(), cols = u32();
        RMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
        return m;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

void write_system(Writer& w, const SystemConfig& s) {
    w.u32(s.bs_antennas);
    w.u32(s.ris_elements);
    w.u32(s.groups);
    w.u32(s.users);
    w.u32(s.user_antennas);
    w.u32(s.tau1);
    w.u32(s.tau2);
    w.f64(s.pu_watts);
    w.f64(s.noise_watts);
    w.f64(s.z0);
}

SystemConfig read_system(Reader& r) {
    SystemConfig s;
    s.bs_antennas = r.u32();
    s.ris_elements = r.u32();
    s.groups = r.u32();
    s.users = r.u32();
    s.user_antennas = r.u32();
    s.tau1 = r.u32();
    s.tau2 = r.u32();
    s.pu_watts = r.f64();
    s.noise_watts = r.f64();
    s.z0 = r.f64();
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("stored system config is invalid: ") + e.what());
    }
    return s;
}

void write_channel_model(Writer& w, const ChannelModelConfig& c) {
    w.f64(c.rician_k_it);
    w.f64(c.rician_k_los);
    w.f64(c.rician_k_nlos);
    w.u32(c.static_it ? 1 : 0);
    w.u32(c.clusters_it);
    w.u32(c.shared_clusters);
    w.u32(c.private_clusters);
    w.u32(c.rays_per_cluster);
    w.f64(c.angle_spread);
    w.f64(c.p_los);
    w.u64(c.geometry_seed);
}

ChannelModelConfig read_channel_model(Reader& r) {
    ChannelModelConfig c;
    c.rician_k_it = r.f64();
    c.rician_k_los = r.f64();
    c.rician_k_nlos = r.f64();
    c.static_it = r.u32() != 0;
    c.clusters_it = r.u32();
    c.shared_clusters = r.u32();
    c.private_clusters = r.u32();
    c.rays_per_cluster = r.u32();
    c.angle_spread = r.f64();
    c.p_los = r.f64();
    c.geometry_seed = r.u64();
    return c;
}

void write_model(Writer& w, const ModelConfig& m) {
    w.u32(m.d_model);
    w.u32(m.d_ff);
    w.u32(m.heads);
    w.u32(m.intra_layers);
    w.u32(m.inter_layers);
    w.u32(m.ffc_widths.size());
    for (auto v : m.ffc_widths) w.u32(v);
    w.u32(m.d_group);
    w.f64(m.xi);
    w.u32(m.positional_encoding ? 1 : 0);
    w.u32(m.tsmo_enabled ? 1 : 0);
}

ModelConfig read_model(Reader& r) {
    ModelConfig m;
    m.d_model = r.u32();
    m.d_ff = r.u32();
    m.heads = r.u32();
    m.intra_layers = r.u32();
    m.inter_layers = r.u32();
    m.ffc_widths.resize(r.u32());
    for (auto& v : m.ffc_widths) v = r.u32();
    m.d_group = r.u32();
    m.xi = r.f64();
    m.positional_encoding = r.u32() != 0;
    m.tsmo_enabled = r.u32() != 0;
    return m;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path);
}

}  // namespace

std::string serialize_dataset(const DatasetSplit& split) {
    Writer w;
    w.magic("BDRS");
    w.u32(kDatasetVersion);
    write_system(w, split.system);
    write_channel_model(w, split.model);
    w.u32(static_cast<std::uint32_t>(split.role));
    w.u64(split.seed_base);
    w.u64(split.samples.size());
    const std::size_t q_len = split.system.rx_dims() * split.system.users * split.system.coeffs();
    for (const auto& s : split.samples) {
        w.cmatrix(s.channels.h_it);
        w.cmatrix(s.channels.h_ri);
        std::vector<double> re(q_len), im(q_len);
        s.cascaded.write_tensor(re.data(), im.data());
        w.f64s(re);
        w.f64s(im);
    }
    return w.take();
}

DatasetSplit deserialize_dataset(const std::string& bytes) {
    Reader r(bytes);
    r.magic("BDRS");
    if (const auto v = r.u32(); v != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(v));
    DatasetSplit split;
    split.system = read_system(r);
    split.model = read_channel_model(r);
    const std::size_t role = r.u32();
    if (role > 2) throw FormatError("bad split role");
    split.role = static_cast<SplitRole>(role);
    split.seed_base = r.u64();
    const std::uint64_t count = r.u64();
    const SystemConfig& sys = split.system;
    const MappingP p = build_mapping(sys.group_size());
    split.samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Sample s;
        s.channels.h_it = r.cmatrix(sys.bs_antennas, sys.ris_elements);
        s.channels.h_ri = r.cmatrix(sys.ris_elements, sys.pilot_length());
        const std::size_t q_len = sys.rx_dims() * sys.users * sys.coeffs();
        const std::vector<double> re = r.f64s(q_len), im = r.f64s(q_len);
        s.cascaded = CascadedChannel::from_tensor(re.data(), im.data(), sys.rx_dims(), sys.users, sys.coeffs());
        const CascadedChannel check = assemble_cascaded(s.channels, p, sys);
        double err = 0.0;
        for (std::size_t k = 0; k < sys.users; ++k) err += (check.per_user[k] - s.cascaded.per_user[k]).squaredNorm();
        if (std::sqrt(err / check.frobenius_sq()) > kRoundTripTolerance)
            throw FormatError("sample " + std::to_string(i) + ": stored Q̄ does not match its channels");
        split.samples.push_back(std::move(s));
    }
    if (!r.done()) throw FormatError("trailing bytes after dataset");
    return split;
}

void save_dataset(const DatasetSplit& split, const std::string& path) { write_file(path, serialize_dataset(split)); }
DatasetSplit load_dataset(const std::string& path) { return deserialize_dataset(read_file(path)); }

std::string serialize_checkpoint(const ModelBundle& b) {
    Writer w;
    w.magic("BDMC");
    w.u32(kCheckpointVersion);
    write_system(w, b.system);
    write_model(w, b.model);
    w.f64(b.norm.pilot_mean);
    w.f64(b.norm.pilot_std);
    w.f64(b.norm.label_gain);
    w.u64(b.phase1_seed);
    w.rmatrix(b.phase1.values);
    w.f64(b.pu_lo_dbm);
    w.f64(b.pu_hi_dbm);
    w.rmatrix(b.phase2_fixed.values);
    w.u32(b.params.items().size());
    for (const auto& [name, var] : b.params.items()) {
        w.str(name);
        w.u32(var.shape().size());
        for (auto d : var.shape()) w.u32(d);
        for (double v : var.value().data()) w.f64(v);
    }
    return w.take();
}

ModelBundle deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    r.magic("BDMC");
    if (const auto v = r.u32(); v != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(v));
    ModelBundle b;
    b.system = read_system(r);
    b.model = read_model(r);
    b.norm.pilot_mean = r.f64();
    b.norm.pilot_std = r.f64();
    b.norm.label_gain = r.f64();
    b.phase1_seed = r.u64();
    b.phase1.values = r.rmatrix();
    b.pu_lo_dbm = r.f64();
    b.pu_hi_dbm = r.f64();
    b.phase2_fixed.values = r.rmatrix();
    if (static_cast<std::size_t>(b.phase1.values.rows()) != b.system.coeffs() ||
        b.phase1.subframes() != b.system.tau1)
        throw FormatError("Phase-I susceptances do not match the stored system config");
    const std::size_t count = r.u32();
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = r.str();
        ad::Shape shape(r.u32());
        for (auto& d : shape) d = r.u32();
        ad::Tensor t(shape);
        for (auto& v : t.data()) v = r.f64();
        b.params.add(std::move(name), std::move(t));
    }
    if (!r.done()) throw FormatError("trailing bytes after checkpoint");
    try {
        b.model.validate(b.system);
        b.bind_layers();
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
    return b;
}

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
    write_file(path, serialize_checkpoint(bundle));
}
ModelBundle load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace bdris
