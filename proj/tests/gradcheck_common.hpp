// Central finite-difference gradient checker shared by the unit tests and the
// acceptance suite. Everything runs in 64-bit; the per-element error is
// absolute below 1e-4 magnitude and relative above it.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "clinembed/encoder.hpp"
#include "clinembed/graph.hpp"
#include "clinembed/simcse.hpp"
#include "clinembed/tsdae.hpp"

namespace gradcheck {

using clinembed::Graph;
using clinembed::Rng;
using clinembed::Tensor;
using DRef = Graph<double>::Ref;
using Builder =
    std::function<DRef(Graph<double>&, const std::vector<DRef>&)>;

// Random projection of any tensor onto a scalar, through graph ops so the
// whole composite is differentiated.
inline DRef scalarize(Graph<double>& g, DRef x, Rng& rng) {
  const int n = static_cast<int>(g.value(x).numel());
  Tensor<double> proj({n, 1}, 0.0);
  for (auto& v : proj.data) v = rng.uniform() * 2.0 - 1.0;
  return g.reshape(g.matmul(g.reshape(x, {1, n}), g.constant(std::move(proj))),
                   {1});
}

inline double fd_max_error(const std::vector<Tensor<double>>& params,
                           const Builder& build, uint64_t graph_seed,
                           double step = 1e-5) {
  Graph<double> g(graph_seed);
  std::vector<DRef> refs;
  for (auto t : params) {
    t.requires_grad = true;
    refs.push_back(g.input(std::move(t)));
  }
  g.backward(build(g, refs));
  std::vector<std::vector<double>> analytic;
  analytic.reserve(refs.size());
  for (auto r : refs) analytic.push_back(g.grad(r));

  auto evaluate = [&](const std::vector<Tensor<double>>& p) {
    Graph<double> g2(graph_seed);
    std::vector<DRef> rr;
    for (auto t : p) {
      t.requires_grad = false;
      rr.push_back(g2.input(std::move(t)));
    }
    return g2.value(build(g2, rr)).data[0];
  };

  auto element_error = [&](std::vector<Tensor<double>>& work, size_t i,
                           size_t j, double h) {
    const double saved = work[i].data[j];
    work[i].data[j] = saved + h;
    const double up = evaluate(work);
    work[i].data[j] = saved - h;
    const double down = evaluate(work);
    work[i].data[j] = saved;

    const double fd = (up - down) / (2.0 * h);
    const double a = analytic[i][j];
    double err = std::abs(a - fd);
    const double denom = std::max(std::abs(a), std::abs(fd));
    if (denom > 1e-4) err /= denom;
    return err;
  };

  double max_err = 0.0;
  std::vector<Tensor<double>> work = params;
  for (size_t i = 0; i < work.size(); ++i) {
    for (size_t j = 0; j < work[i].data.size(); ++j) {
      double err = element_error(work, i, j, step);
      // A relu kink inside the difference window invalidates the estimate;
      // shrinking the step past the kink recovers it, while a genuine
      // gradient bug stays wrong at every step size.
      for (double h = step / 10.0; err > 1e-4 && h >= step / 100.0;
           h /= 10.0) {
        err = std::min(err, element_error(work, i, j, h));
      }
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

inline Tensor<double> uniform_tensor(std::vector<int> shape, Rng& rng,
                                     double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape), 0.0);
  for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Values bounded away from zero, for relu kinks and cosine norms.
inline Tensor<double> offset_tensor(std::vector<int> shape, Rng& rng,
                                    double min_abs = 0.2) {
  Tensor<double> t(std::move(shape), 0.0);
  for (auto& v : t.data) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    v = sign * (min_abs + rng.uniform());
  }
  return t;
}

// One named check: max FD error over `instances` random instances.
using CheckFn = std::function<double(uint64_t instance_seed)>;

inline std::map<std::string, CheckFn> all_op_checks() {
  using clinembed::TokenBatch;
  std::map<std::string, CheckFn> checks;

  checks["matmul_2d"] = [](uint64_t seed) {
    Rng rng(seed);
    const int m = 2 + static_cast<int>(rng.uniform_index(3));
    const int k = 2 + static_cast<int>(rng.uniform_index(3));
    const int n = 2 + static_cast<int>(rng.uniform_index(3));
    auto a = uniform_tensor({m, k}, rng);
    auto b = uniform_tensor({k, n}, rng);
    return fd_max_error({a, b}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.matmul(p[0], p[1]), prj);
    }, seed);
  };

  checks["matmul_batched"] = [](uint64_t seed) {
    Rng rng(seed);
    const int b = 2 + static_cast<int>(rng.uniform_index(2));
    auto a = uniform_tensor({b, 3, 2}, rng);
    auto c = uniform_tensor({b, 2, 3}, rng);
    return fd_max_error({a, c}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.matmul(p[0], p[1]), prj);
    }, seed);
  };

  checks["add"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({3, 4}, rng);
    auto b = uniform_tensor({3, 4}, rng);
    return fd_max_error({a, b}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.add(p[0], p[1]), prj);
    }, seed);
  };

  checks["add_bias_broadcast"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({4, 3}, rng);
    auto b = uniform_tensor({3}, rng);
    return fd_max_error({a, b}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.add(p[0], p[1]), prj);
    }, seed);
  };

  checks["scale"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({2, 5}, rng);
    const double factor = rng.uniform() * 3.0 - 1.5;
    return fd_max_error({a}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.scale(p[0], factor), prj);
    }, seed);
  };

  checks["relu"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = offset_tensor({3, 4}, rng);
    return fd_max_error({a}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.relu(p[0]), prj);
    }, seed);
  };

  checks["softmax_last"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({3, 5}, rng, -2.0, 2.0);
    return fd_max_error({a}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.softmax(p[0], -1), prj);
    }, seed);
  };

  checks["softmax_axis0"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({4, 3}, rng, -2.0, 2.0);
    return fd_max_error({a}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.softmax(p[0], 0), prj);
    }, seed);
  };

  checks["layer_norm"] = [](uint64_t seed) {
    Rng rng(seed);
    auto x = uniform_tensor({3, 6}, rng, -2.0, 2.0);
    auto gain = uniform_tensor({6}, rng, 0.5, 1.5);
    auto bias = uniform_tensor({6}, rng);
    return fd_max_error({x, gain, bias},
                        [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.layer_norm(p[0], p[1], p[2]), prj);
    }, seed);
  };

  checks["embedding_lookup"] = [](uint64_t seed) {
    Rng rng(seed);
    auto table = uniform_tensor({7, 4}, rng);
    std::vector<int32_t> ids(6);
    for (auto& id : ids) id = static_cast<int32_t>(rng.uniform_index(7));
    return fd_max_error({table}, [&, ids](Graph<double>& g,
                                          const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.embedding_lookup(p[0], ids, {2, 3}), prj);
    }, seed);
  };

  checks["dropout_mask"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({4, 5}, rng);
    return fd_max_error({a}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.dropout(p[0], 0.3), prj);
    }, seed);
  };

  checks["cross_entropy"] = [](uint64_t seed) {
    Rng rng(seed);
    const int n = 3, c = 5;
    auto logits = uniform_tensor({n, c}, rng, -2.0, 2.0);
    std::vector<int32_t> targets(n);
    std::vector<double> weights(n);
    for (int i = 0; i < n; ++i) {
      targets[static_cast<size_t>(i)] = static_cast<int32_t>(rng.uniform_index(c));
      weights[static_cast<size_t>(i)] = 0.1 + rng.uniform();
    }
    return fd_max_error({logits}, [&, targets, weights](
                                      Graph<double>& g,
                                      const std::vector<DRef>& p) {
      return g.cross_entropy(p[0], targets, weights);
    }, seed);
  };

  checks["cosine_matrix"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = offset_tensor({3, 4}, rng);
    auto b = offset_tensor({3, 4}, rng);
    return fd_max_error({a, b}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.cosine_matrix(p[0], p[1]), prj);
    }, seed);
  };

  checks["concat"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({3, 2}, rng);
    auto b = uniform_tensor({3, 4}, rng);
    return fd_max_error({a, b}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.concat(p[0], p[1]), prj);
    }, seed);
  };

  checks["mean_pool"] = [](uint64_t seed) {
    Rng rng(seed);
    const int b = 2, s = 4, d = 3;
    auto x = uniform_tensor({b, s, d}, rng);
    std::vector<double> mask(static_cast<size_t>(b) * s, 0.0);
    for (int bi = 0; bi < b; ++bi) {
      mask[static_cast<size_t>(bi) * s] = 1.0;  // guarantee one real token
      for (int si = 1; si < s; ++si) {
        mask[static_cast<size_t>(bi) * s + si] = rng.uniform() < 0.6 ? 1.0 : 0.0;
      }
    }
    return fd_max_error({x}, [&, mask](Graph<double>& g,
                                       const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.mean_pool(p[0], mask), prj);
    }, seed);
  };

  checks["reshape"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({2, 6}, rng);
    return fd_max_error({a}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.reshape(p[0], {3, 4}), prj);
    }, seed);
  };

  checks["permute"] = [](uint64_t seed) {
    Rng rng(seed);
    auto a = uniform_tensor({2, 3, 4}, rng);
    return fd_max_error({a}, [&](Graph<double>& g, const std::vector<DRef>& p) {
      Rng prj(seed ^ 0x11);
      return scalarize(g, g.permute(p[0], {2, 0, 1}), prj);
    }, seed);
  };

  checks["sigmoid_bce"] = [](uint64_t seed) {
    Rng rng(seed);
    const int n = 6;
    auto logits = uniform_tensor({n}, rng, -2.0, 2.0);
    std::vector<double> targets(n);
    for (auto& y : targets) y = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return fd_max_error({logits}, [&, targets](Graph<double>& g,
                                               const std::vector<DRef>& p) {
      return g.sigmoid_bce(p[0], targets);
    }, seed);
  };

  checks["mse"] = [](uint64_t seed) {
    Rng rng(seed);
    const int n = 6;
    auto pred = uniform_tensor({n}, rng);
    std::vector<double> targets(n);
    for (auto& y : targets) y = rng.uniform() * 2.0 - 1.0;
    return fd_max_error({pred}, [&, targets](Graph<double>& g,
                                             const std::vector<DRef>& p) {
      return g.mse(p[0], targets);
    }, seed);
  };

  // Random 3-layer graph: linear -> relu stacks into an mse loss.
  checks["mlp_composite"] = [](uint64_t seed) {
    Rng rng(seed);
    const int n = 3, d0 = 4, d1 = 5, d2 = 4, d3 = 2;
    auto x = offset_tensor({n, d0}, rng);
    auto w1 = uniform_tensor({d0, d1}, rng);
    auto b1 = offset_tensor({d1}, rng);
    auto w2 = uniform_tensor({d1, d2}, rng);
    auto b2 = offset_tensor({d2}, rng);
    auto w3 = uniform_tensor({d2, d3}, rng);
    auto b3 = uniform_tensor({d3}, rng);
    std::vector<double> targets(static_cast<size_t>(n) * d3);
    for (auto& t : targets) t = rng.uniform() * 2.0 - 1.0;
    return fd_max_error(
        {x, w1, b1, w2, b2, w3, b3},
        [&, targets](Graph<double>& g, const std::vector<DRef>& p) {
          auto h1 = g.relu(g.add(g.matmul(p[0], p[1]), p[2]));
          auto h2 = g.relu(g.add(g.matmul(h1, p[3]), p[4]));
          auto out = g.add(g.matmul(h2, p[5]), p[6]);
          return g.mse(g.reshape(out, {n * d3}), targets);
        },
        seed);
  };

  return checks;
}

// Whole-model composites through the real encoder/decoder stacks.
inline std::map<std::string, CheckFn> model_composite_checks() {
  using namespace clinembed;
  std::map<std::string, CheckFn> checks;

  auto tiny_config = [] {
    EncoderConfig cfg;
    cfg.vocab_size = 12;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ffn = 12;
    cfg.max_seq_len = 6;
    cfg.dropout_rate = 0.1f;
    return cfg;
  };

  auto random_batch = [](Rng& rng, int batch, int max_len, int vocab) {
    std::vector<std::vector<int32_t>> seqs;
    for (int i = 0; i < batch; ++i) {
      const int content = 1 + static_cast<int>(rng.uniform_index(
                                  static_cast<size_t>(max_len - 2)));
      std::vector<int32_t> s{Vocabulary::kBos};
      for (int t = 0; t < content; ++t) {
        s.push_back(static_cast<int32_t>(4 + rng.uniform_index(
                                                 static_cast<size_t>(vocab - 4))));
      }
      s.push_back(Vocabulary::kEos);
      seqs.push_back(std::move(s));
    }
    return seqs;
  };

  checks["encoder_infonce"] = [=](uint64_t seed) {
    Rng rng(seed);
    const EncoderConfig cfg = tiny_config();
    auto model = EncoderModel<double>::init(cfg, seed);
    TokenBatch batch = make_batch(random_batch(rng, 3, cfg.max_seq_len,
                                               cfg.vocab_size));
    std::vector<Tensor<double>> params;
    for (const auto& item : model.params.items) params.push_back(item.tensor);

    return fd_max_error(
        params,
        [&, batch](Graph<double>& g, const std::vector<DRef>& refs) {
          BoundParams<double> w;
          for (size_t i = 0; i < model.params.items.size(); ++i) {
            w.index[model.params.items[i].name] = i;
            w.refs.push_back(refs[i]);
          }
          auto [z1, z2] = make_view_nodes(g, cfg, w, batch);
          return info_nce_node(g, z1, z2, 0.1);
        },
        seed);
  };

  checks["decoder_reconstruction"] = [=](uint64_t seed) {
    Rng rng(seed);
    const EncoderConfig cfg = tiny_config();
    auto enc = EncoderModel<double>::init(cfg, seed);
    auto dec = DecoderModel<double>::init(cfg, seed + 1);
    auto originals = random_batch(rng, 2, cfg.max_seq_len, cfg.vocab_size);
    std::vector<std::vector<int32_t>> corrupted;
    Rng crng(seed ^ 0xc);
    for (const auto& s : originals) corrupted.push_back(corrupt(s, 0.4f, crng).corrupted);
    TokenBatch enc_batch = make_batch(corrupted);

    std::vector<Tensor<double>> params;
    std::vector<std::string> names;
    for (const auto& item : enc.params.items) {
      params.push_back(item.tensor);
      names.push_back("enc." + item.name);
    }
    for (const auto& item : dec.params.items) {
      params.push_back(item.tensor);
      names.push_back("dec." + item.name);
    }
    const size_t enc_count = enc.params.items.size();

    return fd_max_error(
        params,
        [&, enc_batch, originals](Graph<double>& g,
                                  const std::vector<DRef>& refs) {
          BoundParams<double> ew, dw;
          for (size_t i = 0; i < enc_count; ++i) {
            ew.index[enc.params.items[i].name] = i;
            ew.refs.push_back(refs[i]);
          }
          for (size_t i = 0; i < dec.params.items.size(); ++i) {
            dw.index[dec.params.items[i].name] = i;
            dw.refs.push_back(refs[enc_count + i]);
          }
          auto pooled = encode_batch(g, cfg, ew, enc_batch, true);
          auto memory = g.reshape(pooled, {enc_batch.batch, 1, cfg.d_model});
          return decoder_loss(g, cfg, dw, ew["tok_emb"], memory, originals,
                              true);
        },
        seed);
  };

  return checks;
}

// Max error across `instances` seeds for one check.
inline double run_check(const CheckFn& check, int instances,
                        uint64_t master_seed) {
  double max_err = 0.0;
  for (int i = 0; i < instances; ++i) {
    max_err = std::max(
        max_err, check(clinembed::mix_seed(master_seed, static_cast<uint64_t>(i))));
  }
  return max_err;
}

}  // namespace gradcheck
