// SPDX-License-Identifier: Apache-2.0

#include "metauda/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>

namespace metauda::ad {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::shared_ptr<RecordState> t_current_record;
thread_local int t_live_records = 0;
thread_local int t_peak_records = 0;
// Node ids only need to be monotone within a thread: a graph never spans
// threads.
thread_local std::uint64_t t_next_node_id = 1;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != data.size()) {
    throw ContractViolation("tensor shape " + shape_str(shape_) + " does not match " +
                            std::to_string(data.size()) + " elements");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::variable(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data)).as_variable();
}

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractViolation("item() on tensor of shape " + shape_str(shape_));
  }
  return (*data_)[0];
}

Tensor Tensor::detach() const {
  Tensor t;
  t.data_ = data_;
  t.shape_ = shape_;
  return t;
}

Tensor Tensor::as_variable() const {
  Tensor t = detach();
  auto node = std::make_shared<Node>();
  node->op = "leaf";
  node->id = t_next_node_id++;
  t.node_ = std::move(node);
  return t;
}

bool Tensor::same_values(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  auto a = data();
  auto b = other.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

Tensor make_result(const std::string& op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericFault(op, "non-finite value produced by " + op);
    }
  }
  Tensor out(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;

  auto node = std::make_shared<Node>();
  node->op = op;
  node->id = t_next_node_id++;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  node->record = t_current_record;
  if (node->record) {
    if (node->record->node_count == 0) node->record->first_node_id = node->id;
    ++node->record->node_count;
  }
  out.node_ = std::move(node);
  return out;
}

bool grad_mode_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

EnableGradGuard::EnableGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { t_grad_enabled = previous_; }

RecordState::RecordState(std::string l) : label(std::move(l)), live_counter_(&t_live_records) {
  ++*live_counter_;
  if (*live_counter_ > t_peak_records) t_peak_records = *live_counter_;
}

RecordState::~RecordState() { --*live_counter_; }

GradRecord::GradRecord(std::string label)
    : state_(std::make_shared<RecordState>(std::move(label))),
      previous_(t_current_record) {
  t_current_record = state_;
}

GradRecord::~GradRecord() { t_current_record = std::move(previous_); }

int live_record_count() { return t_live_records; }
int peak_record_count() { return t_peak_records; }
void reset_peak_record_count() { t_peak_records = t_live_records; }

}  // namespace metauda::ad
