#pragma once

#include <string>
#include <vector>

#include "slfm/tensor.hpp"

namespace slfm {

// Ordered registry of named tensors. Trainable entries get requires_grad and
// are what the optimizer walks; frozen entries (stubs, pretrained modules)
// are registered only so checkpoints capture them.
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor t, bool trainable = true);

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

    std::vector<Tensor> trainable() const;
    std::vector<std::string> trainable_names() const;

    const Tensor* find(const std::string& name) const;

    int64_t total_size() const;
    int64_t trainable_size() const;

    void clear_grads();

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::vector<bool> trainable_;
};

}  // namespace slfm
