#include "ninv/autodiff.hpp"

#include <unordered_map>
#include <unordered_set>

#include "ninv/ops.hpp"

namespace ninv {

namespace {

template <typename T>
thread_local BasicTape<T>* g_active_tape = nullptr;

}  // namespace

template <typename T>
BasicTape<T>::BasicTape() : previous_(g_active_tape<T>) {
  g_active_tape<T> = this;
}

template <typename T>
BasicTape<T>::~BasicTape() {
  g_active_tape<T> = previous_;
}

template <typename T>
BasicTape<T>* BasicTape<T>::active() {
  return g_active_tape<T>;
}

template <typename T>
void BasicTape<T>::record(std::string_view op, std::vector<TensorT> inputs, TensorT& output,
                          BackwardFn backward) {
  output.set_requires_grad(true);
  output.mark_result();
  entries_.push_back(Entry{op, std::move(inputs), output, std::move(backward)});
}

template <typename T>
std::vector<BasicTensor<T>> BasicTape<T>::gradients(const TensorT& out, std::span<const TensorT> wrt,
                                                    bool create_graph) {
  if (!out.defined() || out.numel() != 1) {
    throw ContractError("gradients requested of a non-scalar output " +
                        (out.defined() ? shape_str(out.shape()) : std::string("<undefined>")));
  }
  const std::size_t n = entries_.size();

  // Forward reachability from the requested tensors; only entries downstream
  // of some wrt tensor can carry gradient back to it.
  std::unordered_set<const void*> useful;
  for (const auto& w : wrt) useful.insert(w.id());
  std::vector<bool> entry_useful(n, false);
  bool connected = useful.count(out.id()) > 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = entries_[i];
    for (const auto& in : e.inputs) {
      if (useful.count(in.id())) {
        entry_useful[i] = true;
        break;
      }
    }
    if (entry_useful[i]) useful.insert(e.output.id());
    if (e.output.id() == out.id()) connected = true;
  }
  if (!connected) throw ContractError("output is not connected to the tape");

  if (!create_graph) pause();
  struct Resume {
    BasicTape* tape;
    bool active;
    ~Resume() {
      if (active) tape->resume();
    }
  } resume_guard{this, !create_graph};

  std::unordered_map<const void*, TensorT> grads;
  grads.emplace(out.id(), TensorT::full(out.shape(), T(1)));
  last_replay_.clear();

  for (std::size_t i = n; i-- > 0;) {
    if (!entry_useful[i]) continue;
    // Copied: with create_graph the backward call appends to entries_.
    const Entry e = entries_[i];
    auto it = grads.find(e.output.id());
    if (it == grads.end()) continue;
    last_replay_.push_back(i);
    TensorT grad_out = it->second;
    std::vector<bool> needs(e.inputs.size());
    bool any = false;
    for (std::size_t j = 0; j < e.inputs.size(); ++j) {
      needs[j] = e.inputs[j].requires_grad() && useful.count(e.inputs[j].id()) > 0;
      any = any || needs[j];
    }
    if (!any) continue;
    auto in_grads = e.backward(grad_out, needs);
    for (std::size_t j = 0; j < e.inputs.size(); ++j) {
      if (!needs[j] || !in_grads[j].defined()) continue;
      const void* key = e.inputs[j].id();
      auto g = grads.find(key);
      if (g == grads.end()) {
        grads.emplace(key, in_grads[j]);
      } else {
        g->second = add(g->second, in_grads[j]);
      }
    }
  }

  std::vector<TensorT> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.id());
    result.push_back(it != grads.end() ? it->second : TensorT::zeros(w.shape()));
  }
  return result;
}

template <typename T>
void BasicTape<T>::backward(const TensorT& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  std::vector<TensorT> leaves;
  std::unordered_set<const void*> seen;
  for (const auto& e : entries_) {
    for (const auto& in : e.inputs) {
      if (in.requires_grad() && in.is_leaf() && seen.insert(in.id()).second) leaves.push_back(in);
    }
  }
  auto grads = gradients(loss, leaves, false);
  for (std::size_t i = 0; i < leaves.size(); ++i) leaves[i].accumulate_grad(grads[i].data());
}

template <typename T>
BasicTensor<T> grad_norm_sq(BasicTape<T>& tape, const BasicTensor<T>& scalar_out,
                            std::span<const BasicTensor<T>> params) {
  std::unordered_set<const void*> ids;
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_norm_sq: parameter does not require gradients");
    ids.insert(p.id());
  }
  bool on_tape = false;
  for (const auto& e : tape.entries()) {
    for (const auto& in : e.inputs) on_tape = on_tape || ids.count(in.id()) > 0;
    if (on_tape) break;
  }
  if (!on_tape) throw ContractError("grad_norm_sq: parameters are disjoint from the tape");

  auto grads = tape.gradients(scalar_out, params, true);
  BasicTensor<T> total;
  for (const auto& g : grads) {
    auto term = sum(square(g));
    total = total.defined() ? add(total, term) : term;
  }
  return total.defined() ? total : BasicTensor<T>::scalar(T(0));
}

template class BasicTape<float>;
template class BasicTape<double>;
template BasicTensor<float> grad_norm_sq(BasicTape<float>&, const BasicTensor<float>&,
                                         std::span<const BasicTensor<float>>);
template BasicTensor<double> grad_norm_sq(BasicTape<double>&, const BasicTensor<double>&,
                                          std::span<const BasicTensor<double>>);

}  // namespace ninv
