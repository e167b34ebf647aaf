#pragma once

#include <cstddef>
#include <vector>

namespace fairbase {

// Model output vectors paired with the ground-truth class and the protected
// attribute value of each sample. Input to all metrics and to the training
// objective.
struct OutputBatch {
  std::vector<std::vector<double>> outputs;  // one score vector per sample
  std::vector<int> targets;                  // ground-truth class indices
  std::vector<int> demographics;             // protected attribute values

  std::size_t size() const { return outputs.size(); }

  // Number of classes implied by the output vectors (first vector's length).
  int num_classes() const {
    return outputs.empty() ? 0 : static_cast<int>(outputs.front().size());
  }

  // Throws EmptyInputError / ArgumentError when the three lists disagree,
  // an output vector has fewer than two elements, or an index is invalid.
  void validate() const;
};

}  // namespace fairbase
