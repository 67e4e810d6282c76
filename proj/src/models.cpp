#include "ssml/models.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "ssml/rng.hpp"

namespace ssml {

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::MLP: return "MLP";
        case ModelKind::STNN: return "STNN";
        case ModelKind::CNN: return "CNN";
    }
    return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
    std::string u(s);
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
    if (u == "MLP") return ModelKind::MLP;
    if (u == "STNN") return ModelKind::STNN;
    if (u == "CNN") return ModelKind::CNN;
    throw std::invalid_argument("unknown model kind '" + std::string(s) + "' (want MLP|STNN|CNN)");
}

namespace {

struct ConvStage {
    std::string name;
    int out_ch, kh, kw;
    bool pool;
};

std::vector<ConvStage> cnn_stages(const ModelSpec& spec) {
    return {
        {"conv1", 16, 1, 16, true},
        {"conv2", 32, 1, 3, true},
        {"conv3", 64, 1, 3, true},
        {"conv4", 128, 1, 3, false},
        {"conv5", 256, spec.channels, 1, false},  // spatial collapse
    };
}

[[noreturn]] void fail_layer(const ModelSpec& spec, const std::string& layer, const std::string& why) {
    throw std::invalid_argument(to_string(spec.kind) + " construction failed at " + layer + ": " + why +
                                " (channels=" + std::to_string(spec.channels) +
                                ", time_len=" + std::to_string(spec.time_len) + ")");
}

struct BlockDef {
    std::string name;
    std::vector<int> shape;
    int fan_in;  // 0 for zero-initialized biases
};

std::vector<BlockDef> block_defs(const ModelSpec& spec) {
    const int c = spec.channels, t = spec.time_len, k = spec.n_classes;
    std::vector<BlockDef> defs;
    switch (spec.kind) {
        case ModelKind::MLP: {
            defs.push_back({"hidden.W", {c * t, spec.mlp_hidden}, c * t});
            defs.push_back({"hidden.b", {spec.mlp_hidden}, 0});
            defs.push_back({"out.W", {spec.mlp_hidden, k}, spec.mlp_hidden});
            defs.push_back({"out.b", {k}, 0});
            break;
        }
        case ModelKind::STNN: {
            const int s = spec.stnn_spatial_filters, q = spec.stnn_temporal_filters;
            defs.push_back({"spatial.W", {s, c}, c});
            defs.push_back({"spatial.b", {s}, 0});
            defs.push_back({"temporal.W", {t, q}, t});
            defs.push_back({"temporal.b", {q}, 0});
            defs.push_back({"out.W", {s * q, k}, s * q});
            defs.push_back({"out.b", {k}, 0});
            break;
        }
        case ModelKind::CNN: {
            int in_ch = 1;
            for (const ConvStage& st : cnn_stages(spec)) {
                defs.push_back({st.name + ".K", {st.out_ch, in_ch, st.kh, st.kw}, in_ch * st.kh * st.kw});
                defs.push_back({st.name + ".b", {st.out_ch}, 0});
                in_ch = st.out_ch;
            }
            const int n = spec.feature_width();
            defs.push_back({"out.W", {n, k}, n});
            defs.push_back({"out.b", {k}, 0});
            break;
        }
    }
    return defs;
}

}  // namespace

std::vector<LayerShape> layer_shapes(const ModelSpec& spec) {
    if (spec.channels <= 0 || spec.time_len <= 0)
        fail_layer(spec, "input", "non-positive input dimensions");
    if (spec.n_classes < 2) fail_layer(spec, "output", "need at least 2 classes");
    std::vector<LayerShape> out;
    out.push_back({"input", {spec.channels, spec.time_len}});
    switch (spec.kind) {
        case ModelKind::MLP: {
            if (spec.mlp_hidden <= 0) fail_layer(spec, "hidden", "non-positive hidden width");
            out.push_back({"flatten", {spec.channels * spec.time_len}});
            out.push_back({"hidden", {spec.mlp_hidden}});
            out.push_back({"output", {spec.n_classes}});
            break;
        }
        case ModelKind::STNN: {
            if (spec.stnn_spatial_filters <= 0 || spec.stnn_temporal_filters <= 0)
                fail_layer(spec, "spatial", "non-positive filter count");
            out.push_back({"spatial", {spec.stnn_spatial_filters, spec.time_len}});
            out.push_back({"temporal", {spec.stnn_spatial_filters, spec.stnn_temporal_filters}});
            out.push_back({"flatten", {spec.stnn_spatial_filters * spec.stnn_temporal_filters}});
            out.push_back({"output", {spec.n_classes}});
            break;
        }
        case ModelKind::CNN: {
            int h = spec.channels, w = spec.time_len;
            for (const ConvStage& st : cnn_stages(spec)) {
                if (st.kh > h || st.kw > w)
                    fail_layer(spec, st.name, "kernel " + std::to_string(st.kh) + "x" + std::to_string(st.kw) +
                                                  " larger than input " + std::to_string(h) + "x" +
                                                  std::to_string(w));
                h = h - st.kh + 1;
                w = w - st.kw + 1;
                out.push_back({st.name, {st.out_ch, h, w}});
                if (st.pool) {
                    if (w < 2) fail_layer(spec, st.name + ".pool", "pooled axis shorter than 2");
                    w /= 2;
                    out.push_back({st.name + ".pool", {st.out_ch, h, w}});
                }
            }
            out.push_back({"flatten", {256 * h * w}});
            out.push_back({"output", {spec.n_classes}});
            break;
        }
    }
    return out;
}

void ModelSpec::validate() const { layer_shapes(*this); }

int ModelSpec::feature_width() const {
    switch (kind) {
        case ModelKind::MLP: return mlp_hidden;
        case ModelKind::STNN: return stnn_spatial_filters * stnn_temporal_filters;
        case ModelKind::CNN: {
            const auto shapes = layer_shapes(*this);
            return shapes[shapes.size() - 2].shape[0];  // flatten stage
        }
    }
    return 0;
}

Tensor& ModelParams::block(std::string_view name) {
    for (auto& [n, t] : blocks)
        if (n == name) return t;
    throw std::invalid_argument("no parameter block named '" + std::string(name) + "'");
}

const Tensor& ModelParams::block(std::string_view name) const {
    return const_cast<ModelParams*>(this)->block(name);
}

std::vector<Tensor*> ModelParams::tensors() {
    std::vector<Tensor*> out;
    out.reserve(blocks.size());
    for (auto& [n, t] : blocks) out.push_back(&t);
    return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
    std::vector<const Tensor*> out;
    out.reserve(blocks.size());
    for (const auto& [n, t] : blocks) out.push_back(&t);
    return out;
}

int64_t ModelParams::param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : blocks) n += t.size();
    return n;
}

uint64_t ModelParams::content_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : blocks) {
        h = bytes_hash(name.data(), name.size(), h);
        h = tensor_hash(t, h);
    }
    return h;
}

ModelParams build(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    ModelParams p;
    p.spec = spec;
    p.seed = seed;
    std::mt19937_64 rng = make_rng(seed);
    for (const BlockDef& def : block_defs(spec)) {
        Tensor t = Tensor::zeros(def.shape);
        if (def.fan_in > 0) {
            const float bound = std::sqrt(6.0f / static_cast<float>(def.fan_in));
            std::uniform_real_distribution<float> dist(-bound, bound);
            for (float& v : t.data) v = dist(rng);
        }
        p.blocks.emplace_back(def.name, std::move(t));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Forward passes. The pure templated walk and the taped walk mirror each
// other op for op so the float results agree bitwise.
// ---------------------------------------------------------------------------

namespace {

template <class T>
TensorT<T> batched_conv(const TensorT<T>& x, const TensorT<T>& k, const TensorT<T>& b) {
    const int m = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    TensorT<T> sample = TensorT<T>::zeros({c, h, w});
    TensorT<T> out;
    for (int i = 0; i < m; ++i) {
        std::copy_n(x.data.begin() + static_cast<size_t>(i) * c * h * w, static_cast<size_t>(c) * h * w,
                    sample.data.begin());
        TensorT<T> oi = conv2d_core(sample, k, b.data.data());
        if (i == 0) out = TensorT<T>::zeros({m, oi.dim(0), oi.dim(1), oi.dim(2)});
        std::copy(oi.data.begin(), oi.data.end(), out.data.begin() + static_cast<size_t>(i) * oi.size());
    }
    return out;
}

template <class T>
TensorT<T> batched_matmul_left(const TensorT<T>& p, const TensorT<T>& x, const TensorT<T>& b) {
    const int rows = p.dim(0), c = p.dim(1), m = x.dim(0), t_len = x.dim(2);
    require_shape(x.dim(1) == c, "spatial stage: channel mismatch " + p.shape_str() + " vs " + x.shape_str());
    TensorT<T> out = TensorT<T>::zeros({m, rows, t_len});
    MatRM<double> pd = mat_view(p, rows, c).template cast<double>();
    for (int i = 0; i < m; ++i) {
        Eigen::Map<const MatRM<T>> xi(x.data.data() + static_cast<size_t>(i) * c * t_len, c, t_len);
        MatRM<double> prod = pd * xi.template cast<double>();
        T* dst = out.data.data() + static_cast<size_t>(i) * rows * t_len;
        for (int r = 0; r < rows; ++r)
            for (int tt = 0; tt < t_len; ++tt)
                dst[r * t_len + tt] = static_cast<T>(prod(r, tt) + static_cast<double>(b.data[static_cast<size_t>(r)]));
    }
    return out;
}

template <class T>
TensorT<T> batched_matmul_right(const TensorT<T>& x, const TensorT<T>& q, const TensorT<T>& b) {
    const int m = x.dim(0), rows = x.dim(1), t_len = x.dim(2), cols = q.dim(1);
    require_shape(q.dim(0) == t_len, "temporal stage: inner mismatch " + x.shape_str() + " vs " + q.shape_str());
    TensorT<T> out = TensorT<T>::zeros({m, rows, cols});
    MatRM<double> qd = mat_view(q, t_len, cols).template cast<double>();
    for (int i = 0; i < m; ++i) {
        Eigen::Map<const MatRM<T>> xi(x.data.data() + static_cast<size_t>(i) * rows * t_len, rows, t_len);
        MatRM<double> prod = xi.template cast<double>() * qd;
        T* dst = out.data.data() + static_cast<size_t>(i) * rows * cols;
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < cols; ++j)
                dst[r * cols + j] = static_cast<T>(prod(r, j) + static_cast<double>(b.data[static_cast<size_t>(j)]));
    }
    return out;
}

template <class T>
TensorT<T> reshape_copy(const TensorT<T>& x, std::vector<int> shape) {
    TensorT<T> out;
    require_shape(TensorT<T>::count(shape) == x.size(), "reshape size mismatch");
    out.shape = std::move(shape);
    out.data = x.data;
    return out;
}

template <class T>
ForwardResultT<T> forward_pure(const ModelSpec& spec, const std::vector<const TensorT<T>*>& blocks,
                               const TensorT<T>& x, const StageObserver<T>* observer) {
    require_shape(x.ndim() == 3, "forward: want x[m,C,T], got " + x.shape_str());
    require_shape(x.dim(1) == spec.channels && x.dim(2) == spec.time_len,
                  "forward: input " + x.shape_str() + " vs spec [" + std::to_string(spec.channels) + "x" +
                      std::to_string(spec.time_len) + "]");
    const int m = x.dim(0);
    auto see = [&](const std::string& name, const TensorT<T>& t) {
        if (observer && *observer) (*observer)(name, t);
    };
    size_t bi = 0;
    auto next = [&]() -> const TensorT<T>& { return *blocks.at(bi++); };
    ForwardResultT<T> res;
    switch (spec.kind) {
        case ModelKind::MLP: {
            const TensorT<T>& hw = next();
            const TensorT<T>& hb = next();
            const TensorT<T>& ow = next();
            const TensorT<T>& ob = next();
            TensorT<T> flat = reshape_copy(x, {m, spec.channels * spec.time_len});
            see("flatten", flat);
            TensorT<T> pre = linear_forward(flat, hw, hb);
            see("hidden.pre", pre);
            TensorT<T> hidden = relu_forward(pre);
            see("hidden", hidden);
            res.features = hidden;
            TensorT<T> logits = linear_forward(hidden, ow, ob);
            res.probs = softmax_forward(logits);
            see("output", res.probs);
            break;
        }
        case ModelKind::STNN: {
            const TensorT<T>& sw = next();
            const TensorT<T>& sb = next();
            const TensorT<T>& tw = next();
            const TensorT<T>& tb = next();
            const TensorT<T>& ow = next();
            const TensorT<T>& ob = next();
            TensorT<T> spatial = batched_matmul_left(sw, x, sb);
            see("spatial", spatial);
            TensorT<T> temporal = batched_matmul_right(spatial, tw, tb);
            see("temporal", temporal);
            TensorT<T> flat = reshape_copy(temporal, {m, spec.feature_width()});
            see("flatten", flat);
            res.features = flat;
            res.probs = softmax_forward(linear_forward(flat, ow, ob));
            see("output", res.probs);
            break;
        }
        case ModelKind::CNN: {
            TensorT<T> cur = reshape_copy(x, {m, 1, spec.channels, spec.time_len});
            for (const ConvStage& st : cnn_stages(spec)) {
                const TensorT<T>& kk = next();
                const TensorT<T>& kb = next();
                TensorT<T> pre = batched_conv(cur, kk, kb);
                see(st.name + ".pre", pre);
                cur = relu_forward(pre);
                see(st.name, cur);
                if (st.pool) {
                    cur = maxpool_forward(cur);
                    see(st.name + ".pool", cur);
                }
            }
            TensorT<T> flat = reshape_copy(cur, {m, spec.feature_width()});
            see("flatten", flat);
            res.features = flat;
            const TensorT<T>& ow = next();
            const TensorT<T>& ob = next();
            res.probs = softmax_forward(linear_forward(flat, ow, ob));
            see("output", res.probs);
            break;
        }
    }
    return res;
}

}  // namespace

ForwardResult forward(const ModelParams& params, const Tensor& x, const StageObserver<float>* observer) {
    return forward_pure<float>(params.spec, params.tensors(), x, observer);
}

ForwardResultT<double> forward_double(const ModelSpec& spec, const std::vector<TensorD>& blocks,
                                      const TensorD& x) {
    std::vector<const TensorD*> ptrs;
    ptrs.reserve(blocks.size());
    for (const TensorD& b : blocks) ptrs.push_back(&b);
    return forward_pure<double>(spec, ptrs, x, nullptr);
}

TapedStack forward_on_tape(Tape& tape, const ModelSpec& spec, const std::vector<VarId>& param_ids,
                           const Tensor& x) {
    require_shape(x.ndim() == 3 && x.dim(1) == spec.channels && x.dim(2) == spec.time_len,
                  "forward: input " + x.shape_str() + " vs spec [" + std::to_string(spec.channels) + "x" +
                      std::to_string(spec.time_len) + "]");
    const int m = x.dim(0);
    TapedStack out;
    VarId xin = tape.leaf(x);
    size_t bi = 0;
    auto next = [&]() { return param_ids.at(bi++); };
    switch (spec.kind) {
        case ModelKind::MLP: {
            VarId hw = next(), hb = next(), ow = next(), ob = next();
            VarId flat = reshape(tape, xin, {m, spec.channels * spec.time_len});
            VarId hidden = relu(tape, linear(tape, flat, hw, hb));
            out.features = hidden;
            out.probs = softmax(tape, linear(tape, hidden, ow, ob));
            break;
        }
        case ModelKind::STNN: {
            VarId sw = next(), sb = next(), tw = next(), tb = next(), ow = next(), ob = next();
            VarId spatial = matmul_left(tape, sw, xin, sb);
            VarId temporal = matmul_right(tape, spatial, tw, tb);
            VarId flat = reshape(tape, temporal, {m, spec.feature_width()});
            out.features = flat;
            out.probs = softmax(tape, linear(tape, flat, ow, ob));
            break;
        }
        case ModelKind::CNN: {
            VarId cur = reshape(tape, xin, {m, 1, spec.channels, spec.time_len});
            for (const ConvStage& st : cnn_stages(spec)) {
                VarId kk = next(), kb = next();
                cur = relu(tape, conv2d(tape, cur, kk, kb));
                if (st.pool) cur = maxpool(tape, cur);
            }
            VarId flat = reshape(tape, cur, {m, spec.feature_width()});
            out.features = flat;
            VarId ow = next(), ob = next();
            out.probs = softmax(tape, linear(tape, flat, ow, ob));
            break;
        }
    }
    return out;
}

TapedForward forward_taped(const ModelParams& params, const Tensor& x) {
    TapedForward fw;
    for (const auto& [name, t] : params.blocks) fw.params.push_back(fw.tape.leaf(t));
    TapedStack stack = forward_on_tape(fw.tape, params.spec, fw.params, x);
    fw.probs = stack.probs;
    fw.features = stack.features;
    return fw;
}

std::vector<Tensor> param_grads(const TapedForward& fwd) {
    std::vector<Tensor> out;
    out.reserve(fwd.params.size());
    for (VarId id : fwd.params) out.push_back(fwd.tape.grad_or_zeros(id));
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void save_checkpoint(const std::string& prefix, const ModelParams& params, const ClassCenters* centers) {
    std::ofstream manifest(prefix + ".manifest");
    if (!manifest) throw FormatError("cannot write " + prefix + ".manifest");
    manifest << "kind = " << to_string(params.spec.kind) << "\n";
    manifest << "channels = " << params.spec.channels << "\n";
    manifest << "time_len = " << params.spec.time_len << "\n";
    manifest << "n_classes = " << params.spec.n_classes << "\n";
    manifest << "seed = " << params.seed << "\n";
    if (centers) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(centers->lr_center));
        manifest << "center_lr = " << buf << "\n";
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(centers->lambda));
        manifest << "center_lambda = " << buf << "\n";
    }
    auto block_line = [&](const std::string& name, const Tensor& t) {
        manifest << "block = " << name;
        for (int d : t.shape) manifest << " " << d;
        manifest << "\n";
    };
    for (const auto& [name, t] : params.blocks) block_line(name, t);
    if (centers) block_line("centers", centers->centers);
    manifest.close();

    std::ofstream blob(prefix + ".blob", std::ios::binary);
    if (!blob) throw FormatError("cannot write " + prefix + ".blob");
    for (const auto& [name, t] : params.blocks)
        blob.write(reinterpret_cast<const char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (centers)
        blob.write(reinterpret_cast<const char*>(centers->centers.data.data()),
                   static_cast<std::streamsize>(centers->centers.data.size() * sizeof(float)));
}

Checkpoint load_checkpoint(const std::string& prefix) {
    std::ifstream manifest(prefix + ".manifest");
    if (!manifest) throw FormatError("cannot open " + prefix + ".manifest");
    std::map<std::string, std::string> keys;
    std::vector<std::pair<std::string, std::vector<int>>> listed;
    std::string line;
    while (std::getline(manifest, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("manifest line without '=': " + line);
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "block") {
            std::istringstream is(val);
            std::string name;
            is >> name;
            std::vector<int> shape;
            int d;
            while (is >> d) shape.push_back(d);
            if (name.empty() || shape.empty()) throw FormatError("bad block line: " + line);
            listed.emplace_back(name, shape);
        } else {
            keys[key] = val;
        }
    }
    for (const char* req : {"kind", "channels", "time_len", "n_classes", "seed"})
        if (!keys.count(req)) throw FormatError("manifest missing key '" + std::string(req) + "'");

    ModelSpec spec;
    spec.kind = model_kind_from_string(keys["kind"]);
    spec.channels = std::stoi(keys["channels"]);
    spec.time_len = std::stoi(keys["time_len"]);
    spec.n_classes = std::stoi(keys["n_classes"]);
    spec.validate();

    const auto expected = block_defs(spec);
    const bool has_centers = !listed.empty() && listed.back().first == "centers";
    const size_t n_param_blocks = listed.size() - (has_centers ? 1 : 0);
    if (n_param_blocks != expected.size())
        throw FormatError("manifest lists " + std::to_string(n_param_blocks) + " parameter blocks, spec needs " +
                          std::to_string(expected.size()));
    for (size_t i = 0; i < expected.size(); ++i)
        if (listed[i].first != expected[i].name || listed[i].second != expected[i].shape)
            throw FormatError("block '" + listed[i].first + "' does not match spec block '" +
                              expected[i].name + "'");

    std::ifstream blob(prefix + ".blob", std::ios::binary);
    if (!blob) throw FormatError("cannot open " + prefix + ".blob");

    Checkpoint ck;
    ck.params.spec = spec;
    ck.params.seed = std::stoull(keys["seed"]);
    auto read_block = [&](const std::vector<int>& shape) {
        Tensor t = Tensor::zeros(shape);
        blob.read(reinterpret_cast<char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (blob.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float)))
            throw FormatError("checkpoint blob truncated");
        return t;
    };
    for (size_t i = 0; i < n_param_blocks; ++i)
        ck.params.blocks.emplace_back(listed[i].first, read_block(listed[i].second));
    if (has_centers) {
        ClassCenters cc;
        cc.centers = read_block(listed.back().second);
        if (keys.count("center_lr")) cc.lr_center = std::stof(keys["center_lr"]);
        if (keys.count("center_lambda")) cc.lambda = std::stof(keys["center_lambda"]);
        ck.centers = std::move(cc);
    }
    char extra;
    if (blob.read(&extra, 1); blob.gcount() != 0) throw FormatError("checkpoint blob has trailing bytes");
    return ck;
}

}  // namespace ssml
