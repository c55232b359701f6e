// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a dynamic reverse-mode differentiation record.
//
// Every primitive's backward rule is itself written in terms of recordable
// primitives, so a backward pass run with recording enabled produces
// gradients that can be differentiated again.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metauda::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when a caller breaks an operation's precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Raised when an operation produces a non-finite value.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(std::string op, const std::string& what)
      : std::runtime_error(what), op_(std::move(op)) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

struct Node;
struct RecordState;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  /// A leaf that participates in differentiation.
  static Tensor variable(Shape shape, std::vector<double> data);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t dim() const { return shape_.size(); }
  std::size_t size(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }
  std::span<const double> data() const;
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  bool requires_grad() const { return node_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return node_; }
  /// Same values, no differentiation history.
  Tensor detach() const;
  /// Same values as a fresh leaf variable.
  Tensor as_variable() const;

  bool same_values(const Tensor& other) const;

 private:
  friend Tensor make_result(const std::string&, Shape, std::vector<double>,
                            std::vector<Tensor>,
                            std::function<std::vector<Tensor>(
                                const Tensor&, const std::vector<bool>&)>);

  std::shared_ptr<const std::vector<double>> data_;
  Shape shape_;
  std::shared_ptr<Node> node_;
};

/// Backward rule: maps the upstream gradient to one gradient per input.
/// Entries whose `needed` flag is false may be left undefined.
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out,
                                       const std::vector<bool>& needed)>;

struct Node {
  std::string op;
  std::uint64_t id = 0;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  std::shared_ptr<RecordState> record;
};

/// Builds an op result. A node is attached only if recording is enabled
/// and at least one input requires grad. Throws NumericFault on non-finite
/// output.
Tensor make_result(const std::string& op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

// ---------------------------------------------------------------------------
// Recording control

bool grad_mode_enabled();

/// Disables recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

/// A differentiation record. Nodes created while a GradRecord scope is the
/// innermost active one belong to it; the record stays live until the last
/// of its nodes is destroyed.
struct RecordState {
  explicit RecordState(std::string label);
  ~RecordState();
  RecordState(const RecordState&) = delete;
  RecordState& operator=(const RecordState&) = delete;

  std::string label;
  std::uint64_t first_node_id = 0;
  std::uint64_t node_count = 0;

 private:
  int* live_counter_;
};

class GradRecord {
 public:
  explicit GradRecord(std::string label = {});
  ~GradRecord();
  GradRecord(const GradRecord&) = delete;
  GradRecord& operator=(const GradRecord&) = delete;

  const RecordState& state() const { return *state_; }

 private:
  std::shared_ptr<RecordState> state_;
  std::shared_ptr<RecordState> previous_;
};

/// Live record count on the calling thread.
int live_record_count();
/// Highest live record count seen on this thread since the last reset.
int peak_record_count();
void reset_peak_record_count();

}  // namespace metauda::ad
