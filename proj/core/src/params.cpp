#include "smoe/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "smoe/errors.hpp"
#include "smoe/rng.hpp"

namespace smoe {

template <typename T>
Param<T>& ParamStore<T>::create(const std::string& name, std::vector<int> shape, Init init,
                                double std_or_unused, std::uint64_t run_seed) {
    if (index_.count(name)) throw ContractError("param already exists: " + name);
    params_.emplace_back();
    Param<T>& p = params_.back();
    p.name = name;
    p.value.resize(std::move(shape));
    index_[name] = params_.size() - 1;

    if (init != Init::Zeros) {
        Rng rng(Rng::derive(run_seed, fnv1a64(name.data(), name.size())));
        double std = std_or_unused;
        if (init == Init::Xavier) {
            const auto& s = p.value.shape();
            const double fan_in = s.size() == 2 ? s[0] : p.value.numel();
            const double fan_out = s.size() == 2 ? s[1] : p.value.numel();
            std = std::sqrt(2.0 / (fan_in + fan_out));
        }
        for (std::size_t i = 0; i < p.value.numel(); ++i)
            p.value[i] = static_cast<T>(rng.normal() * std);
    }
    return p;
}

template <typename T>
Param<T>& ParamStore<T>::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown param: " + name);
    return params_[it->second];
}

template <typename T>
const Param<T>& ParamStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown param: " + name);
    return params_[it->second];
}

template <typename T>
std::vector<Param<T>*> ParamStore<T>::all() {
    std::vector<Param<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
}

template <typename T>
std::vector<const Param<T>*> ParamStore<T>::all() const {
    std::vector<const Param<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

template <typename T>
void ParamStore<T>::zero_grads() {
    for (auto& p : params_)
        if (!p.grad.empty()) p.grad.fill(T{0});
}

template <typename T>
std::size_t ParamStore<T>::total_numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

template <typename T>
double AdamW<T>::step(ParamStore<T>& params) {
    ++step_count;
    double norm_sq = 0.0;
    for (auto* p : params.all()) {
        if (p->grad.empty()) continue;
        for (std::size_t i = 0; i < p->grad.numel(); ++i) {
            const double g = static_cast<double>(p->grad[i]);
            norm_sq += g * g;
        }
    }
    const double norm = std::sqrt(norm_sq);
    const double clip_scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (auto* p : params.all()) {
        if (p->adam_m.empty()) {
            p->adam_m.resize(p->value.shape());
            p->adam_v.resize(p->value.shape());
        }
        const bool has_grad = !p->grad.empty();
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double g = has_grad ? static_cast<double>(p->grad[i]) * clip_scale : 0.0;
            const double m = beta1 * static_cast<double>(p->adam_m[i]) + (1.0 - beta1) * g;
            const double v = beta2 * static_cast<double>(p->adam_v[i]) + (1.0 - beta2) * g * g;
            p->adam_m[i] = static_cast<T>(m);
            p->adam_v[i] = static_cast<T>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + eps);
            const double decayed = static_cast<double>(p->value[i]) * (1.0 - lr * weight_decay);
            p->value[i] = static_cast<T>(decayed - lr * update);
        }
        if (has_grad) p->grad.fill(T{0});
    }
    return norm;
}

namespace {

constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename T>
void save_params(const ParamStore<T>& params, const std::string& path, const std::string& meta_json) {
    nlohmann::json header;
    header["dtype"] = dtype_name<T>();
    header["meta"] = meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta_json);
    nlohmann::json plist = nlohmann::json::array();
    for (const auto* p : params.all()) {
        nlohmann::json pj;
        pj["name"] = p->name;
        pj["shape"] = p->value.shape();
        plist.push_back(std::move(pj));
    }
    header["params"] = std::move(plist);
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("checkpoint: cannot write " + path);
    out.write(kMagic, 4);
    std::uint32_t ver = kVersion;
    out.write(reinterpret_cast<const char*>(&ver), 4);
    std::uint64_t hl = hs.size();
    out.write(reinterpret_cast<const char*>(&hl), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* p : params.all())
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.numel() * sizeof(T)));
    if (!out) throw FormatError("checkpoint: short write to " + path);
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic in " + path);
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), 4);
    if (ver != kVersion) throw FormatError("checkpoint: unsupported version in " + path);
    std::uint64_t hl = 0;
    in.read(reinterpret_cast<char*>(&hl), 8);
    std::string hs(hl, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hl));
    if (!in) throw FormatError("checkpoint: truncated header in " + path);
    return nlohmann::json::parse(hs);
}

}  // namespace

template <typename T>
std::string load_params(ParamStore<T>& params, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path);
    nlohmann::json header = read_header(in, path);
    if (header.at("dtype").get<std::string>() != dtype_name<T>())
        throw FormatError("checkpoint: dtype mismatch, file has " +
                          header.at("dtype").get<std::string>());
    for (const auto& pj : header.at("params")) {
        const std::string name = pj.at("name").get<std::string>();
        auto shape = pj.at("shape").get<std::vector<int>>();
        Param<T>& p = params.has(name) ? params.get(name)
                                       : params.create(name, shape, Init::Zeros, 0.0, 0);
        if (p.value.shape() != shape)
            throw FormatError("checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.numel() * sizeof(T)));
    }
    if (!in) throw FormatError("checkpoint: truncated data in " + path);
    return header.at("meta").dump();
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("checkpoint: cannot open " + path);
    nlohmann::json header = read_header(in, path);
    return {header.at("dtype").get<std::string>(), header.at("meta").dump()};
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct AdamW<float>;
template struct AdamW<double>;
template void save_params<float>(const ParamStore<float>&, const std::string&, const std::string&);
template void save_params<double>(const ParamStore<double>&, const std::string&, const std::string&);
template std::string load_params<float>(ParamStore<float>&, const std::string&);
template std::string load_params<double>(ParamStore<double>&, const std::string&);

}  // namespace smoe
