#include "slfm/params.hpp"

namespace slfm {

Tensor ParamStore::add(const std::string& name, Tensor t, bool trainable) {
    if (find(name)) throw ConfigError("ParamStore: duplicate parameter name '" + name + "'");
    t.set_requires_grad(trainable);
    items_.emplace_back(name, t);
    trainable_.push_back(trainable);
    return t;
}

std::vector<Tensor> ParamStore::trainable() const {
    std::vector<Tensor> out;
    for (size_t i = 0; i < items_.size(); ++i)
        if (trainable_[i]) out.push_back(items_[i].second);
    return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (size_t i = 0; i < items_.size(); ++i)
        if (trainable_[i]) out.push_back(items_[i].first);
    return out;
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : items_)
        if (n == name) return &t;
    return nullptr;
}

int64_t ParamStore::total_size() const {
    int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

int64_t ParamStore::trainable_size() const {
    int64_t n = 0;
    for (size_t i = 0; i < items_.size(); ++i)
        if (trainable_[i]) n += items_[i].second.size();
    return n;
}

void ParamStore::clear_grads() {
    for (auto& [name, t] : items_) t.clear_grad();
}

}  // namespace slfm
