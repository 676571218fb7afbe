#include "snsteg/model.hpp"

#include <bit>
#include <cmath>
#include <sstream>

#include "snsteg/init.hpp"

namespace snsteg {

namespace {

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stoull(item)));
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

template <typename T>
void fill_from(std::span<T> dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
}

template <typename T>
void hash_span(std::uint64_t& h, std::span<const T> s) {
    for (const T& v : s) {
        std::uint64_t bits = 0;
        if constexpr (sizeof(T) == 4)
            bits = std::bit_cast<std::uint32_t>(v);
        else
            bits = std::bit_cast<std::uint64_t>(v);
        h ^= bits;
        h *= 1099511628211ull;
    }
}

constexpr std::size_t kPoolPadding = 1;

// Gradient buffers keep their storage so spans handed out by params() stay valid.
template <typename T>
void copy_into(std::vector<T>& dst, const std::vector<T>& src) {
    if (dst.size() != src.size()) throw ShapeError("gradient buffer size changed");
    std::copy(src.begin(), src.end(), dst.begin());
}

template <typename T>
Shape vec_shape(const std::vector<T>& v) {
    return Shape{v.size(), 1, 1, 1};
}

}  // namespace

std::string to_string(NormKind k) {
    switch (k) {
        case NormKind::SN: return "sn";
        case NormKind::BnBatch: return "bn-batch";
        case NormKind::BnFixed: return "bn-fixed";
    }
    return "?";
}

NormKind parse_norm_kind(const std::string& s) {
    if (s == "sn") return NormKind::SN;
    if (s == "bn-batch") return NormKind::BnBatch;
    if (s == "bn-fixed") return NormKind::BnFixed;
    throw ConfigError("unknown norm kind '" + s + "' (expected sn, bn-batch or bn-fixed)");
}

std::map<std::string, std::string> NetworkConfig::to_map() const {
    return {
        {"image_size", std::to_string(image_size)},
        {"bank", bank_id},
        {"truncation", fmt(truncation)},
        {"first_conv_channels", std::to_string(first_conv_channels)},
        {"pu_channels", join(pu_channels)},
        {"classes", std::to_string(classes)},
        {"norm", to_string(norm)},
        {"conv_kernel", std::to_string(conv_kernel)},
        {"pool_window", std::to_string(pool_window)},
        {"pool_stride", std::to_string(pool_stride)},
        {"sigma_init", sigma_init == SigmaInit::Deviation ? "deviation" : "variance"},
    };
}

NetworkConfig NetworkConfig::from_map(const std::map<std::string, std::string>& kv) {
    NetworkConfig c;
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    try {
        if (auto v = get("image_size")) c.image_size = std::stoull(*v);
        if (auto v = get("bank")) c.bank_id = *v;
        if (auto v = get("truncation")) c.truncation = std::stod(*v);
        if (auto v = get("first_conv_channels")) c.first_conv_channels = std::stoull(*v);
        if (auto v = get("pu_channels")) c.pu_channels = split_sizes(*v);
        if (auto v = get("classes")) c.classes = std::stoull(*v);
        if (auto v = get("norm")) c.norm = parse_norm_kind(*v);
        if (auto v = get("conv_kernel")) c.conv_kernel = std::stoull(*v);
        if (auto v = get("pool_window")) c.pool_window = std::stoull(*v);
        if (auto v = get("pool_stride")) c.pool_stride = std::stoull(*v);
        if (auto v = get("sigma_init")) {
            if (*v == "deviation")
                c.sigma_init = SigmaInit::Deviation;
            else if (*v == "variance")
                c.sigma_init = SigmaInit::Variance;
            else
                throw ConfigError("sigma_init must be deviation or variance");
        }
    } catch (const std::logic_error& e) {
        throw ConfigError(std::string("network config: malformed value (") + e.what() + ")");
    }
    return c;
}

std::size_t NetworkConfig::final_extent() const {
    std::size_t e = image_size;
    for (std::size_t i = 0; i < pu_channels.size(); ++i)
        e = conv_out_extent(e, pool_window, pool_stride, kPoolPadding);
    return e;
}

std::size_t NetworkConfig::parameter_count() const {
    const std::size_t bank = bank_by_id(bank_id).size();
    const std::size_t k2 = conv_kernel * conv_kernel;
    std::size_t total = bank * first_conv_channels * k2 + first_conv_channels;
    std::size_t in = first_conv_channels;
    for (std::size_t out : pu_channels) {
        total += in * out * k2 + out;
        if (norm != NormKind::SN) total += 2 * out;
        in = out;
    }
    total += in * classes + classes;
    return total;
}

void NetworkConfig::validate() const {
    if (pu_channels.empty()) throw ConfigError("network config: pu_channels must be non-empty");
    if (classes != 2) throw ConfigError("network config: classifier outputs must be 2");
    if (!(truncation > 0.0)) throw ConfigError("network config: truncation threshold must be > 0");
    if (conv_kernel % 2 == 0) throw ConfigError("network config: conv kernel must be odd");
    if (first_conv_channels == 0) throw ConfigError("network config: first conv needs channels");
    const std::size_t min_size = std::size_t{1} << (pu_channels.size() + 1);
    if (image_size < min_size)
        throw ConfigError("network config: image size " + std::to_string(image_size) +
                          " too small for " + std::to_string(pu_channels.size()) +
                          " processing units (need >= " + std::to_string(min_size) + ")");
    bank_by_id(bank_id);
}

bool NetworkConfig::compatible_with(const NetworkConfig& o) const {
    return image_size == o.image_size && bank_id == o.bank_id &&
           first_conv_channels == o.first_conv_channels && pu_channels == o.pu_channels &&
           classes == o.classes && norm == o.norm && conv_kernel == o.conv_kernel &&
           pool_window == o.pool_window && pool_stride == o.pool_stride;
}

int argmax_label(double cover_logit, double stego_logit) {
    return stego_logit > cover_logit ? 1 : 0;
}

template <typename T>
Network<T>::Network(NetworkConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
    config_.validate();
    bank_ = bank_by_id(config_.bank_id);
    hpf_ = bank_.as_conv<T>();
    const std::size_t k = config_.conv_kernel;
    std::uint64_t tag = 0;

    auto init_conv = [&](std::size_t out, std::size_t in) {
        ConvKernels<T> c(out, in, k, k);
        fill_from(c.weights.data(), init_weights_msra(c.weights.size(), in * k * k,
                                                      derive_seed(seed_, tag++)));
        return c;
    };

    conv0_ = init_conv(config_.first_conv_channels, bank_.size());
    conv0_grad_ = ConvKernels<T>(config_.first_conv_channels, bank_.size(), k, k);
    std::size_t in = config_.first_conv_channels;
    for (std::size_t out : config_.pu_channels) {
        ProcessingUnit<T> u;
        u.conv = init_conv(out, in);
        u.conv_grad = ConvKernels<T>(out, in, k, k);
        u.bn = BNParams<T>(out);
        u.bn_grad = BNParams<T>(out);
        u.sn.mean.assign(out, T(0));
        u.sn.std.assign(out, T(1));
        units_.push_back(std::move(u));
        in = out;
    }
    fc_ = LinearParams<T>(config_.classes, in);
    fill_from(fc_.weights.data(),
              init_weights_msra(fc_.weights.size(), in, derive_seed(seed_, tag++)));
    fc_grad_ = LinearParams<T>(config_.classes, in);
}

template <typename T>
Tensor<T> Network<T>::preprocess(const Tensor<T>& batch) const {
    const Shape& s = batch.shape();
    if (s.c != 1 || s.h != config_.image_size || s.w != config_.image_size)
        throw ShapeError("network input " + s.str() + " does not match configured (N,1," +
                         std::to_string(config_.image_size) + "," +
                         std::to_string(config_.image_size) + ")");
    return conv2d_forward(batch, hpf_, 1, kBankKernelSize / 2);
}

template <typename T>
Tensor<T> Network<T>::unit_forward(std::size_t i, const Tensor<T>& x, Mode mode,
                                   std::optional<StatsSource> bn_eval_source, UnitCache* cache) {
    ProcessingUnit<T>& u = units_[i];
    Tensor<T> conv_out = conv2d_forward(x, u.conv, 1, same_padding(config_.conv_kernel));
    Tensor<T> normed;
    BNSaved<T> saved;
    if (config_.norm == NormKind::SN) {
        normed = sn_forward(conv_out, u.sn);
    } else {
        StatsSource src = StatsSource::Batch;
        if (mode == Mode::Eval)
            src = bn_eval_source.value_or(config_.norm == NormKind::BnFixed ? StatsSource::Fixed
                                                                            : StatsSource::Batch);
        u.bn.mode = src;
        auto r = bn_forward(conv_out, u.bn);
        normed = std::move(r.output);
        saved = std::move(r.saved);
    }
    Tensor<T> act = relu_forward(normed);
    Tensor<T> pooled = avgpool_forward(act, config_.pool_window, config_.pool_stride, kPoolPadding);
    if (cache) {
        cache->input = x;
        cache->batch = (config_.norm != NormKind::SN && saved.mode == StatsSource::Batch)
                           ? saved.batch
                           : channel_stats(conv_out);
        cache->conv_out = std::move(conv_out);
        cache->bn_saved = std::move(saved);
        cache->norm_out = std::move(normed);
        cache->relu_out = std::move(act);
    }
    return pooled;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& batch, Mode mode,
                              std::optional<StatsSource> bn_eval_source) {
    if (config_.norm == NormKind::SN && !norm_stats_ready())
        throw Error("forward: SN statistics are not initialized (call init_norm_stats)");
    const bool train = mode == Mode::Train;
    have_cache_ = false;
    unit_cache_.assign(train ? units_.size() : 0, UnitCache{});

    Tensor<T> residual = preprocess(batch);
    Tensor<T> x = truncate_forward(residual, TruncationConfig{config_.truncation});
    Tensor<T> c0 = conv2d_forward(x, conv0_, 1, same_padding(config_.conv_kernel));
    Tensor<T> h = relu_forward(c0);
    if (train) {
        conv0_in_ = std::move(x);
        conv0_out_ = std::move(c0);
    }
    for (std::size_t i = 0; i < units_.size(); ++i)
        h = unit_forward(i, h, mode, bn_eval_source, train ? &unit_cache_[i] : nullptr);
    Tensor<T> pooled = global_avgpool(h);
    Tensor<T> logits = linear_forward(pooled, fc_);
    if (train) {
        gap_in_shape_ = h.shape();
        pooled_ = std::move(pooled);
        have_cache_ = true;
    }
    if (!logits.all_finite()) throw NumericError("forward: non-finite logits");
    return logits;
}

template <typename T>
void Network<T>::zero_grad() {
    auto zero = [](auto& v) { std::fill(v.begin(), v.end(), T(0)); };
    zero(conv0_grad_.weights.storage());
    zero(conv0_grad_.bias);
    for (auto& u : units_) {
        zero(u.conv_grad.weights.storage());
        zero(u.conv_grad.bias);
        zero(u.bn_grad.gamma);
        zero(u.bn_grad.beta);
    }
    zero(fc_grad_.weights.storage());
    zero(fc_grad_.bias);
}

template <typename T>
void Network<T>::backward(const Tensor<T>& grad_logits) {
    if (!have_cache_) throw Error("backward: no saved Train-mode forward pass");
    zero_grad();
    auto fg = linear_backward(grad_logits, pooled_, fc_);
    copy_into(fc_grad_.weights.storage(), fg.weights.storage());
    copy_into(fc_grad_.bias, fg.bias);
    Tensor<T> g = global_avgpool_backward(fg.input, gap_in_shape_);

    for (std::size_t i = units_.size(); i-- > 0;) {
        ProcessingUnit<T>& u = units_[i];
        UnitCache& c = unit_cache_[i];
        g = avgpool_backward(g, c.relu_out.shape(), config_.pool_window, config_.pool_stride,
                             kPoolPadding);
        g = relu_backward(g, c.norm_out);
        if (config_.norm == NormKind::SN) {
            g = sn_backward(g, u.sn);
        } else {
            auto bg = bn_backward(g, c.bn_saved, u.bn);
            copy_into(u.bn_grad.gamma, bg.gamma);
            copy_into(u.bn_grad.beta, bg.beta);
            g = std::move(bg.input);
        }
        auto cg = conv2d_backward(g, c.input, u.conv, 1, same_padding(config_.conv_kernel), true);
        copy_into(u.conv_grad.weights.storage(), cg.weights.storage());
        copy_into(u.conv_grad.bias, cg.bias);
        g = std::move(cg.input);
    }
    g = relu_backward(g, conv0_out_);
    auto cg = conv2d_backward(g, conv0_in_, conv0_, 1, same_padding(config_.conv_kernel), false);
    copy_into(conv0_grad_.weights.storage(), cg.weights.storage());
    copy_into(conv0_grad_.bias, cg.bias);
}

template <typename T>
void Network<T>::apply_stat_updates(double alpha) {
    if (!have_cache_) throw Error("apply_stat_updates: no saved Train-mode forward pass");
    for (std::size_t i = 0; i < units_.size(); ++i) {
        ProcessingUnit<T>& u = units_[i];
        const ChannelStats& b = unit_cache_[i].batch;
        if (config_.norm == NormKind::SN) {
            u.sn = sn_update_stats(u.sn, b.mean, b.std, alpha);
        } else {
            NormStats<T> run{u.bn.running_mean, u.bn.running_std, u.bn.eps, true};
            run = sn_update_stats(run, b.mean, b.std, alpha);
            u.bn.running_mean = std::move(run.mean);
            u.bn.running_std = std::move(run.std);
        }
    }
}

template <typename T>
void Network<T>::init_norm_stats(const Tensor<T>& samples, std::size_t chunk) {
    const std::size_t m = samples.shape().n;
    if (m == 0) throw ConfigError("init_norm_stats: no samples");
    chunk = std::max<std::size_t>(chunk, 1);
    std::vector<Tensor<T>> acts;
    for (std::size_t b = 0; b < m; b += chunk) {
        Tensor<T> x = slice_batch(samples, b, std::min(m, b + chunk));
        x = truncate_forward(preprocess(x), TruncationConfig{config_.truncation});
        acts.push_back(relu_forward(conv2d_forward(x, conv0_, 1, same_padding(config_.conv_kernel))));
    }
    for (ProcessingUnit<T>& u : units_) {
        std::vector<Tensor<T>> conv_outs;
        conv_outs.reserve(acts.size());
        for (const auto& a : acts)
            conv_outs.push_back(conv2d_forward(a, u.conv, 1, same_padding(config_.conv_kernel)));
        NormStats<T> st = sn_init_stats<T>(conv_outs, m, config_.sigma_init);
        u.sn = st;
        u.bn.running_mean = st.mean;
        u.bn.running_std = st.std;
        for (std::size_t j = 0; j < acts.size(); ++j) {
            Tensor<T> normed = sn_forward(conv_outs[j], st);
            acts[j] = avgpool_forward(relu_forward(normed), config_.pool_window,
                                      config_.pool_stride, kPoolPadding);
        }
    }
}

template <typename T>
bool Network<T>::norm_stats_ready() const {
    for (const auto& u : units_)
        if (!u.sn.initialized) return false;
    return true;
}

template <typename T>
std::vector<ParamView<T>> Network<T>::params() {
    std::vector<ParamView<T>> v;
    v.push_back({"conv0.weight", conv0_.weights.data(), conv0_grad_.weights.data(), conv0_.weights.shape()});
    v.push_back({"conv0.bias", conv0_.bias, conv0_grad_.bias, vec_shape(conv0_.bias)});
    for (std::size_t i = 0; i < units_.size(); ++i) {
        auto& u = units_[i];
        const std::string p = "pu" + std::to_string(i) + ".";
        v.push_back({p + "conv.weight", u.conv.weights.data(), u.conv_grad.weights.data(), u.conv.weights.shape()});
        v.push_back({p + "conv.bias", u.conv.bias, u.conv_grad.bias, vec_shape(u.conv.bias)});
        if (config_.norm != NormKind::SN) {
            v.push_back({p + "bn.gamma", u.bn.gamma, u.bn_grad.gamma, vec_shape(u.bn.gamma)});
            v.push_back({p + "bn.beta", u.bn.beta, u.bn_grad.beta, vec_shape(u.bn.beta)});
        }
    }
    v.push_back({"fc.weight", fc_.weights.data(), fc_grad_.weights.data(), fc_.weights.shape()});
    v.push_back({"fc.bias", fc_.bias, fc_grad_.bias, vec_shape(fc_.bias)});
    return v;
}

template <typename T>
std::vector<StateView<T>> Network<T>::state_arrays() {
    std::vector<StateView<T>> v;
    for (std::size_t i = 0; i < units_.size(); ++i) {
        auto& u = units_[i];
        const std::string p = "pu" + std::to_string(i) + ".";
        if (config_.norm == NormKind::SN) {
            v.push_back({p + "sn.mean", std::span<T>(u.sn.mean)});
            v.push_back({p + "sn.std", std::span<T>(u.sn.std)});
        } else {
            v.push_back({p + "bn.running_mean", std::span<T>(u.bn.running_mean)});
            v.push_back({p + "bn.running_std", std::span<T>(u.bn.running_std)});
        }
    }
    return v;
}

template <typename T>
std::size_t Network<T>::parameter_count() {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.value.size();
    return n;
}

template <typename T>
typename Network<T>::Prediction Network<T>::predict(const Tensor<T>& images,
                                                    std::optional<StatsSource> bn_eval_source) {
    const Tensor<T> logits = forward(images, Mode::Eval, bn_eval_source);
    const auto prob = softmax_rows(logits);
    Prediction p;
    const std::size_t k = config_.classes;
    for (std::size_t i = 0; i < images.shape().n; ++i) {
        p.labels.push_back(argmax_label(static_cast<double>(logits[i * k]),
                                        static_cast<double>(logits[i * k + 1])));
        p.stego_probability.push_back(prob[i * k + 1]);
    }
    return p;
}

template <typename T>
std::uint64_t Network<T>::checksum() {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params()) hash_span<T>(h, std::span<const T>(p.value));
    for (const auto& s : state_arrays()) hash_span<T>(h, std::span<const T>(s.value));
    return h;
}

template <typename T>
std::uint64_t Network<T>::hpf_checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    hash_span<T>(h, hpf_.weights.data());
    return h;
}

template <typename T>
void Network<T>::mark_norm_stats_ready() {
    for (auto& u : units_) u.sn.initialized = true;
}

template class Network<float>;
template class Network<double>;

}  // namespace snsteg
