#include "mcinr/model_store.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace mcinr {

namespace {

constexpr char kMagic[7] = {'M', 'C', 'I', 'N', 'R', 'M', '1'};

struct Writer {
    std::vector<unsigned char> buf;

    void bytes(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        buf.insert(buf.end(), p, p + len);
    }
    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void f64(double v) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        u64(u);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    const unsigned char* data;
    std::size_t len;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > len) {
            throw std::runtime_error(std::string("truncated model file while reading ") + what);
        }
    }
    void bytes(void* out, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(out, data + pos, n);
        pos += n;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return data[pos++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(data[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(data[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t u = u32(what);
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    double f64(const char* what) {
        const std::uint64_t u = u64(what);
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data + pos), n);
        pos += n;
        return s;
    }
};

void write_affine(Writer& w, const AffineMap& m) {
    w.f64(m.lo);
    w.f64(m.hi);
}

AffineMap read_affine(Reader& r, const char* what) {
    AffineMap m;
    m.lo = r.f64(what);
    m.hi = r.f64(what);
    return m;
}

// Pre-order traversal carrying original node indices, so leaf identifiers
// survive serialization unchanged.
void write_tree(Writer& w, const std::vector<SplitNode>& tree) {
    w.u32(static_cast<std::uint32_t>(tree.size()));
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        const std::int32_t n = stack.back();
        stack.pop_back();
        const SplitNode& nd = tree[n];
        w.u32(static_cast<std::uint32_t>(n));
        w.f32(nd.centroid[0]);
        w.f32(nd.centroid[1]);
        w.f32(nd.centroid[2]);
        w.u8(nd.is_leaf() ? 0 : 1);
        if (!nd.is_leaf()) {
            w.u32(static_cast<std::uint32_t>(nd.left));
            w.u32(static_cast<std::uint32_t>(nd.right));
            stack.push_back(nd.right);
            stack.push_back(nd.left);
        }
    }
}

std::vector<SplitNode> read_tree(Reader& r) {
    const std::uint32_t count = r.u32("partition node count");
    std::vector<SplitNode> tree(count);
    std::vector<bool> seen(count, false);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t idx = r.u32("partition node index");
        if (idx >= count || seen[idx]) throw std::runtime_error("corrupt partition node index");
        seen[idx] = true;
        SplitNode& nd = tree[idx];
        nd.centroid[0] = r.f32("partition centroid");
        nd.centroid[1] = r.f32("partition centroid");
        nd.centroid[2] = r.f32("partition centroid");
        if (r.u8("partition split flag")) {
            nd.left = static_cast<std::int32_t>(r.u32("partition child index"));
            nd.right = static_cast<std::int32_t>(r.u32("partition child index"));
            if (nd.left < 0 || nd.right < 0 || nd.left >= static_cast<std::int32_t>(count) ||
                nd.right >= static_cast<std::int32_t>(count)) {
                throw std::runtime_error("corrupt partition child index");
            }
        }
    }
    // Recompute depths from the structure.
    std::vector<std::pair<std::int32_t, std::int32_t>> stack{{0, 0}};
    while (!stack.empty()) {
        auto [n, d] = stack.back();
        stack.pop_back();
        tree[n].depth = d;
        if (!tree[n].is_leaf()) {
            stack.push_back({tree[n].left, d + 1});
            stack.push_back({tree[n].right, d + 1});
        }
    }
    return tree;
}

}  // namespace

std::uint32_t crc32_ieee(const unsigned char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

const NetworkParamsF* EncodedModel::find_network(LeafKey key) const {
    auto it = std::lower_bound(networks.begin(), networks.end(), key,
                               [](const auto& a, LeafKey k) { return a.first < k; });
    if (it == networks.end() || it->first != key) return nullptr;
    return &it->second;
}

void EncodedModel::validate() const {
    const auto leaves = partition.leaves();
    if (leaves.size() != networks.size()) {
        throw std::runtime_error("model has " + std::to_string(networks.size()) +
                                 " networks for " + std::to_string(leaves.size()) + " leaves");
    }
    for (const LeafKey& leaf : leaves) {
        if (!find_network(leaf)) {
            throw std::runtime_error("model missing network for leaf " + leaf.str());
        }
    }
    for (const auto& [key, net] : networks) {
        if (net.shape.var_count != static_cast<int>(variable_count)) {
            throw std::runtime_error("network for leaf " + key.str() +
                                     " has wrong variable count");
        }
    }
}

std::uint64_t save_model(const EncodedModel& model, const std::string& path) {
    model.validate();
    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.u32(model.version);

    // Fingerprint block.
    w.u32(model.point_count);
    w.u32(model.timestep_count);
    w.u32(model.variable_count);
    for (const auto& name : model.variable_names) w.str(name);
    w.u64(model.bounds_hash);

    // Normalizer block.
    for (const auto& a : model.norm.axes) write_affine(w, a);
    write_affine(w, model.norm.time);
    w.u32(static_cast<std::uint32_t>(model.norm.variables.size()));
    for (const auto& v : model.norm.variables) write_affine(w, v);

    // Network shape block (all leaves share one shape).
    const NetworkShape& s = model.shape;
    w.u32(static_cast<std::uint32_t>(s.width));
    w.u32(static_cast<std::uint32_t>(s.var_count));
    w.u32(static_cast<std::uint32_t>(s.gfe_blocks));
    w.u32(static_cast<std::uint32_t>(s.lfe_blocks));
    w.u8(s.shared_head ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(s.pe.num_frequencies));
    w.u8(s.pe.include_raw ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(s.pe.input_dim));
    w.f64(s.omega_first);

    // Partition forest.
    w.u32(static_cast<std::uint32_t>(model.partition.tree_count()));
    for (const auto& tree : model.partition.trees) write_tree(w, tree);

    // Per-leaf weight blobs in fixed layer order, plus stats.
    std::map<LeafKey, const ClusterStats*> stats_by_leaf;
    for (const auto& st : model.stats) stats_by_leaf[st.leaf] = &st;
    w.u32(static_cast<std::uint32_t>(model.networks.size()));
    for (const auto& [key, net] : model.networks) {
        w.u32(static_cast<std::uint32_t>(key.tree));
        w.u32(static_cast<std::uint32_t>(key.node));
        auto& mutable_net = const_cast<NetworkParamsF&>(net);
        for_each_param(mutable_net, [&w](std::span<float> p) {
            for (float v : p) w.f32(v);
        });
        const auto it = stats_by_leaf.find(key);
        const std::uint64_t pc = it != stats_by_leaf.end() ? it->second->point_count : 0;
        const double agg = it != stats_by_leaf.end() ? it->second->aggregate_mse : 0.0;
        w.u64(pc);
        w.f64(agg);
        for (std::uint32_t m = 0; m < model.variable_count; ++m) {
            const bool have = it != stats_by_leaf.end() &&
                              m < it->second->per_variable_mse.size();
            w.f64(have ? it->second->per_variable_mse[m] : 0.0);
        }
    }

    w.u32(crc32_ieee(w.buf.data(), w.buf.size()));

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot create model file: " + path);
    os.write(reinterpret_cast<const char*>(w.buf.data()),
             static_cast<std::streamsize>(w.buf.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
    return w.buf.size();
}

EncodedModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open model file: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 8) throw std::runtime_error("model file too short: " + path);
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not an MCINRM1 model (bad magic): " + path);
    }
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i) stored_crc |= std::uint32_t(buf[buf.size() - 4 + i]) << (8 * i);
    if (crc32_ieee(buf.data(), buf.size() - 4) != stored_crc) {
        throw std::runtime_error("model file CRC mismatch (corrupted): " + path);
    }

    Reader r{buf.data(), buf.size() - 4, sizeof(kMagic)};
    EncodedModel model;
    model.version = r.u32("version");
    if (model.version != 1) {
        throw std::runtime_error("unsupported model version " + std::to_string(model.version));
    }
    model.point_count = r.u32("point count");
    model.timestep_count = r.u32("timestep count");
    model.variable_count = r.u32("variable count");
    model.variable_names.resize(model.variable_count);
    for (auto& name : model.variable_names) name = r.str("variable name");
    model.bounds_hash = r.u64("bounds hash");

    for (auto& a : model.norm.axes) a = read_affine(r, "axis normalizer");
    model.norm.time = read_affine(r, "time normalizer");
    const std::uint32_t nvars = r.u32("variable normalizer count");
    model.norm.variables.resize(nvars);
    for (auto& v : model.norm.variables) v = read_affine(r, "variable normalizer");

    NetworkShape& s = model.shape;
    s.width = static_cast<int>(r.u32("width"));
    s.var_count = static_cast<int>(r.u32("network variable count"));
    s.gfe_blocks = static_cast<int>(r.u32("gfe block count"));
    s.lfe_blocks = static_cast<int>(r.u32("lfe block count"));
    s.shared_head = r.u8("shared head flag") != 0;
    s.pe.num_frequencies = static_cast<int>(r.u32("pe frequencies"));
    s.pe.include_raw = r.u8("pe raw flag") != 0;
    s.pe.input_dim = static_cast<int>(r.u32("pe input dim"));
    s.omega_first = r.f64("omega");

    const std::uint32_t tree_count = r.u32("tree count");
    model.partition.trees.resize(tree_count);
    for (auto& tree : model.partition.trees) tree = read_tree(r);

    const std::uint32_t leaf_count = r.u32("leaf count");
    model.networks.reserve(leaf_count);
    for (std::uint32_t i = 0; i < leaf_count; ++i) {
        LeafKey key{static_cast<std::int32_t>(r.u32("leaf tree")),
                    static_cast<std::int32_t>(r.u32("leaf node"))};
        NetworkParamsF net = init_params<float>(s, 0);
        for_each_param(net, [&r](std::span<float> p) {
            for (float& v : p) v = r.f32("network weights");
        });
        ClusterStats st;
        st.leaf = key;
        st.point_count = r.u64("leaf point count");
        st.aggregate_mse = r.f64("leaf residual");
        st.per_variable_mse.resize(model.variable_count);
        for (auto& v : st.per_variable_mse) v = r.f64("leaf per-variable residual");
        model.networks.emplace_back(key, std::move(net));
        model.stats.push_back(std::move(st));
    }
    if (r.pos != r.len) throw std::runtime_error("trailing bytes in model file: " + path);
    model.validate();
    return model;
}

std::uint64_t file_size_bytes(const std::string& path) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) throw std::runtime_error("cannot stat file: " + path);
    return size;
}

double compression_ratio(const Dataset& ds, const std::string& model_path) {
    const std::uint64_t raw = raw_size_bytes(ds);
    const std::uint64_t model = file_size_bytes(model_path);
    return static_cast<double>(raw) / static_cast<double>(model);
}

bool fingerprint_matches(const EncodedModel& model, const Dataset& ds, std::string* why) {
    auto fail = [&why](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    if (model.point_count != ds.point_count || model.timestep_count != ds.timestep_count ||
        model.variable_count != ds.variable_count) {
        return fail("model fingerprint (N=" + std::to_string(model.point_count) + ", T=" +
                    std::to_string(model.timestep_count) + ", M=" +
                    std::to_string(model.variable_count) + ") vs dataset (N=" +
                    std::to_string(ds.point_count) + ", T=" + std::to_string(ds.timestep_count) +
                    ", M=" + std::to_string(ds.variable_count) + ")");
    }
    if (model.variable_names != ds.variable_names) return fail("variable names differ");
    const std::uint64_t h = dataset_fingerprint_hash(ds);
    if (model.bounds_hash != h) {
        return fail("bounds hash " + std::to_string(model.bounds_hash) + " vs dataset " +
                    std::to_string(h));
    }
    return true;
}

}  // namespace mcinr
