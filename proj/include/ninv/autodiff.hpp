#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ninv/tensor.hpp"

namespace ninv {

/// Records executed operations while alive and replays their adjoints in
/// reverse execution order. Constructing a tape makes it the active tape of
/// the current thread; tapes nest and are never shared between threads.
///
/// Backward functions are themselves written in terms of recorded ops, so a
/// gradient computed with create_graph = true can be differentiated again.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;
  // Returns one gradient per input; entries for inputs with needs[i] == false
  // may be left undefined.
  using BackwardFn =
      std::function<std::vector<TensorT>(const TensorT& grad_out, const std::vector<bool>& needs)>;

  struct Entry {
    std::string_view op;
    std::vector<TensorT> inputs;
    TensorT output;
    BackwardFn backward;
  };

  BasicTape();
  ~BasicTape();
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  static BasicTape* active();

  bool recording() const { return paused_ == 0; }
  void pause() { ++paused_; }
  void resume() { --paused_; }

  void record(std::string_view op, std::vector<TensorT> inputs, TensorT& output, BackwardFn backward);

  /// Populates .grad on every leaf tensor that requires gradients.
  void backward(const TensorT& loss);

  /// d(out)/d(wrt[i]) for each i. With create_graph the returned tensors are
  /// recorded on this tape and may be differentiated again.
  std::vector<TensorT> gradients(const TensorT& out, std::span<const TensorT> wrt,
                                 bool create_graph = false);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  // Entry indices visited by the most recent replay, in visit order.
  const std::vector<std::size_t>& last_replay() const { return last_replay_; }

 private:
  std::vector<Entry> entries_;
  std::vector<std::size_t> last_replay_;
  BasicTape* previous_ = nullptr;
  int paused_ = 0;
};

using Tape = BasicTape<float>;
using TapeD = BasicTape<double>;

/// Suspends recording on the active tape for its lifetime.
template <typename T>
class NoGradGuard {
 public:
  NoGradGuard() : tape_(BasicTape<T>::active()) {
    if (tape_) tape_->pause();
  }
  ~NoGradGuard() {
    if (tape_) tape_->resume();
  }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  BasicTape<T>* tape_;
};

/// Sum of squared gradient entries of a scalar with respect to params,
/// returned as a differentiable scalar (second-order replay through the
/// tape). Params that require gradients but do not influence the output
/// contribute zero; if none of them appears on the tape at all this is a
/// ContractError.
template <typename T>
BasicTensor<T> grad_norm_sq(BasicTape<T>& tape, const BasicTensor<T>& scalar_out,
                            std::span<const BasicTensor<T>> params);

extern template class BasicTape<float>;
extern template class BasicTape<double>;

}  // namespace ninv
