#include "mmfgl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "mmfgl/error.hpp"
#include "mmfgl/rng.hpp"

namespace mmfgl {

namespace {

std::uint64_t epoch_seed(const ClientState& client, int round, int epoch, std::size_t term) {
  std::uint64_t r = derive_seed(client.seed, "round", std::uint64_t(round));
  std::uint64_t e = derive_seed(r, "epoch", std::uint64_t(epoch));
  return derive_seed(e, "term", term);
}

ObjectiveConfig build_objective(const ObjectiveTerm& term, const ClientState& client,
                                std::uint64_t seed) {
  ObjectiveConfig o;
  o.kind = term.kind;
  if (term.kind == ObjectiveConfig::Kind::Classification) o.mask = client.train_mask;
  o.mask_fraction = term.mask_fraction;
  o.mod_a = term.mod_a;
  o.mod_b = term.mod_b;
  o.temperature = term.temperature;
  o.seed = seed;
  return o;
}

// The local optimization loop shared by every algorithm: epochs of full-batch
// steps on the weighted task loss plus whichever extras are switched on.
LocalResult train_epochs(ClientState& client, const ModelSpec& spec, const FedConfig& config,
                         const TaskSpec& task, int round, const ParamVector* prox_anchor,
                         const ParamVector* server_c, const Mat<float>* proto_anchors,
                         double proto_strength) {
  if (task.terms.empty()) throw ConfigError("local training without any loss term");
  LocalResult out;
  double loss_sum = 0.0;
  for (int e = 0; e < config.local_epochs; ++e) {
    double loss = 0.0;
    std::vector<float> grad(client.params.size(), 0.0f);
    try {
      for (std::size_t t = 0; t < task.terms.size(); ++t) {
        const ObjectiveTerm& term = task.terms[t];
        ObjectiveConfig obj = build_objective(term, client, epoch_seed(client, round, e, t));
        GradResult res = objective_grad(spec, client.params, client.batch, obj);
        loss += term.weight * res.loss;
        for (std::size_t i = 0; i < grad.size(); ++i)
          grad[i] += float(term.weight) * res.grad[i];
      }
      if (proto_anchors) {
        ObjectiveConfig obj;
        obj.kind = ObjectiveConfig::Kind::PrototypeAlignment;
        obj.mask = client.train_mask;
        obj.anchors = *proto_anchors;
        obj.strength = proto_strength;
        GradResult res = objective_grad(spec, client.params, client.batch, obj);
        loss += res.loss;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += res.grad[i];
      }
      if (prox_anchor && config.mu != 0.0) {
        const auto& w = client.params.values();
        const auto& a = prox_anchor->values();
        if (a.size() != w.size())
          throw DimensionMismatchError("proximal anchor layout mismatch");
        double penalty = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double d = double(w[i]) - double(a[i]);
          penalty += d * d;
          grad[i] += float(config.mu * d);
        }
        loss += 0.5 * config.mu * penalty;
      }
      if (server_c) {
        const auto& c = server_c->values();
        const auto& ci = client.scaffold_ci.values();
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += c[i] - ci[i];
      }
      if (!std::isfinite(loss)) {
        out.diverged = true;
        break;
      }
      if (config.optimizer == OptimKind::Sgd)
        sgd_step(client.params, grad, config.optim);
      else
        adam_step(client.params, grad, config.optim, client.adam);
    } catch (const NumericError&) {
      out.diverged = true;
      break;
    }
    loss_sum += loss;
    ++out.epochs_run;
  }
  out.mean_loss = out.epochs_run > 0 ? loss_sum / out.epochs_run : 0.0;
  return out;
}

std::pair<std::uint64_t, std::uint64_t> count_correct(const ModelSpec& spec,
                                                      const ParamVector& params,
                                                      const Batch& batch,
                                                      const std::vector<std::uint8_t>& mask) {
  ForwardResult r = forward(spec, params, batch);
  std::uint64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < batch.n; ++i) {
    if (!mask[i] || batch.labels[i] == kUnlabeled) continue;
    std::size_t best = 0;
    for (std::size_t j = 1; j < r.logits.cols(); ++j)
      if (r.logits(i, j) > r.logits(i, best)) best = j;
    correct += int(best) == batch.labels[i];
    ++total;
  }
  return {correct, total};
}

double personal_union_accuracy(const ModelSpec& spec, const std::vector<ClientState>& clients) {
  std::uint64_t correct = 0, total = 0;
  for (const auto& c : clients) {
    auto [hit, seen] = count_correct(spec, c.params, c.batch, c.test_mask);
    correct += hit;
    total += seen;
  }
  if (total == 0) throw ConfigError("no labeled test nodes on any client");
  return double(correct) / double(total);
}

double shared_union_accuracy(const ModelSpec& spec, const ParamVector& params,
                             const std::vector<ClientState>& clients) {
  std::uint64_t correct = 0, total = 0;
  for (const auto& c : clients) {
    auto [hit, seen] = count_correct(spec, params, c.batch, c.test_mask);
    correct += hit;
    total += seen;
  }
  if (total == 0) throw ConfigError("no labeled test nodes on any client");
  return double(correct) / double(total);
}

// participant positions into `clients`, ascending client id
std::vector<std::size_t> sample_participants(const ServerState& server,
                                             const std::vector<ClientState>& clients) {
  const std::size_t k = clients.size();
  if (k == 0) throw ConfigError("round without clients");
  std::vector<std::size_t> by_id(k);
  for (std::size_t i = 0; i < k; ++i) by_id[i] = i;
  std::sort(by_id.begin(), by_id.end(), [&](std::size_t a, std::size_t b) {
    return clients[a].client_id < clients[b].client_id;
  });
  const auto want = std::min<std::size_t>(
      k, std::max<std::size_t>(
             1, std::size_t(std::lround(server.config.participation * double(k)))));
  Rng rng(derive_seed(server.seed, "sample", std::uint64_t(server.round)));
  std::vector<std::size_t> picks = rng.sample_without_replacement(k, want);
  std::vector<std::size_t> chosen;
  chosen.reserve(want);
  for (std::size_t p : picks) chosen.push_back(by_id[p]);
  std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
    return clients[a].client_id < clients[b].client_id;
  });
  return chosen;
}

}  // namespace

ServerState init_server(const ModelSpec& spec, const FedConfig& config, int num_classes,
                        std::uint64_t seed) {
  spec.validate();
  if (config.local_epochs < 1) throw ConfigError("local_epochs must be at least 1");
  if (!(config.participation > 0.0) || config.participation > 1.0)
    throw ConfigError("participation must lie in (0, 1]");
  if (config.mu < 0.0) throw ConfigError("proximal strength must be nonnegative");
  if (config.algorithm == Aggregator::Scaffold) {
    if (config.optimizer != OptimKind::Sgd)
      throw ConfigError("control-variate corrections assume plain sgd local steps");
    if (!(config.optim.lr > 0.0)) throw ConfigError("control variates need a positive step size");
  }

  ServerState s;
  s.spec = spec;
  s.config = config;
  s.num_classes = num_classes;
  s.seed = seed;
  s.global = init_params(spec, seed);
  if (config.algorithm == Aggregator::Scaffold) s.scaffold_c = ParamVector(spec);
  if (config.algorithm == Aggregator::FedProto) {
    if (num_classes <= 0) throw ConfigError("prototype exchange needs a positive class count");
    s.prototypes = Mat<float>(std::size_t(num_classes), spec.embedding_dim());
    s.proto_counts.assign(std::size_t(num_classes), 0);
  }
  return s;
}

std::vector<ClientState> make_clients(const std::vector<ClientShard>& shards,
                                      const ServerState& server) {
  std::vector<ClientState> clients;
  clients.reserve(shards.size());
  for (const auto& shard : shards) {
    ClientState c;
    c.client_id = shard.client_id;
    c.batch = Batch::from_graph(shard.graph);
    c.train_mask = shard.train_mask;
    c.val_mask = shard.val_mask;
    c.test_mask = shard.test_mask;
    for (auto m : c.train_mask) c.train_count += m != 0;
    c.params = server.global;
    if (server.config.algorithm == Aggregator::Scaffold)
      c.scaffold_ci = ParamVector(server.spec);
    c.seed = derive_seed(server.seed, "client", std::uint64_t(shard.client_id));
    clients.push_back(std::move(c));
  }
  std::sort(clients.begin(), clients.end(),
            [](const ClientState& a, const ClientState& b) { return a.client_id < b.client_id; });
  return clients;
}

ParamVector aggregate_fedavg(const std::vector<const ParamVector*>& models,
                             const std::vector<std::uint64_t>& weights) {
  if (models.empty()) throw ConfigError("aggregation without updates");
  if (models.size() != weights.size())
    throw DimensionMismatchError("one weight per model update required");
  const std::size_t p = models[0]->size();
  double total = 0.0;
  for (std::uint64_t w : weights) total += double(w);
  if (total == 0.0) throw ConfigError("all aggregation weights are zero");

  std::vector<double> acc(p, 0.0);
  for (std::size_t k = 0; k < models.size(); ++k) {
    if (models[k]->size() != p) throw DimensionMismatchError("model update layout mismatch");
    const double wk = double(weights[k]);
    const auto& v = models[k]->values();
    for (std::size_t i = 0; i < p; ++i) acc[i] += wk * double(v[i]);
  }
  ParamVector out = *models[0];
  for (std::size_t i = 0; i < p; ++i) out.values()[i] = float(acc[i] / total);
  return out;
}

LocalResult local_update(ClientState& client, const ServerState& server, const TaskSpec& task,
                         int round) {
  const FedConfig& cfg = server.config;
  const ParamVector* prox = cfg.algorithm == Aggregator::FedProx ? &server.global : nullptr;
  const ParamVector* sc = cfg.algorithm == Aggregator::Scaffold ? &server.scaffold_c : nullptr;
  const Mat<float>* protos =
      cfg.algorithm == Aggregator::FedProto && server.round > 0 ? &server.prototypes : nullptr;

  if (cfg.algorithm != Aggregator::Scaffold)
    return train_epochs(client, server.spec, cfg, task, round, prox, nullptr, protos,
                        cfg.proto_lambda);

  // control-variate path: remember the anchor, then refresh c_i afterwards
  ParamVector anchor = client.params;
  LocalResult out = train_epochs(client, server.spec, cfg, task, round, nullptr, sc, nullptr, 0.0);
  if (out.diverged || out.epochs_run == 0) return out;

  const double denom = cfg.optim.lr * double(out.epochs_run);
  out.scaffold_delta_c = ParamVector(server.spec);
  auto& ci = client.scaffold_ci.values();
  const auto& c = server.scaffold_c.values();
  for (std::size_t i = 0; i < ci.size(); ++i) {
    const double fresh = double(ci[i]) - double(c[i]) +
                         (double(anchor.values()[i]) - double(client.params.values()[i])) / denom;
    out.scaffold_delta_c.values()[i] = float(fresh) - ci[i];
    ci[i] = float(fresh);
  }
  return out;
}

namespace {

RoundRecord run_parameter_round(ServerState& server, std::vector<ClientState>& clients,
                                const TaskSpec& task) {
  RoundRecord rec;
  rec.round = server.round;
  const std::vector<std::size_t> chosen = sample_participants(server, clients);

  const std::vector<std::uint8_t> w_bytes = serialize_params(server.global);
  std::vector<std::uint8_t> c_bytes;
  if (server.config.algorithm == Aggregator::Scaffold)
    c_bytes = serialize_params(server.scaffold_c);

  std::vector<std::vector<std::uint8_t>> uploads;   // model payloads, survivors only
  std::vector<std::vector<std::uint8_t>> dc_uploads;
  std::vector<std::uint64_t> weights;
  std::vector<std::size_t> survivors;

  for (std::size_t idx : chosen) {
    ClientState& cl = clients[idx];
    rec.participants.push_back(cl.client_id);
    rec.downlink_bytes += w_bytes.size() + c_bytes.size();
    deserialize_params(cl.params, w_bytes);  // receive the broadcast

    LocalResult lr = local_update(cl, server, task, server.round);
    rec.train_loss.push_back(lr.mean_loss);

    std::vector<std::uint8_t> up = serialize_params(cl.params);
    rec.uplink_bytes += up.size();
    if (server.config.algorithm == Aggregator::Scaffold) {
      std::vector<std::uint8_t> dc =
          lr.diverged ? std::vector<std::uint8_t>(w_bytes.size(), 0)
                      : serialize_params(lr.scaffold_delta_c);
      rec.uplink_bytes += dc.size();
      if (!lr.diverged) dc_uploads.push_back(std::move(dc));
    }
    if (lr.diverged) {
      rec.diverged.push_back(cl.client_id);
      continue;
    }
    uploads.push_back(std::move(up));
    weights.push_back(cl.train_count);
    survivors.push_back(idx);
  }

  if (!uploads.empty()) {
    // the server works from the deserialized wire payloads
    std::vector<ParamVector> received(uploads.size(), ParamVector(server.spec));
    for (std::size_t k = 0; k < uploads.size(); ++k)
      deserialize_params(received[k], uploads[k]);

    if (server.config.algorithm == Aggregator::Scaffold) {
      const std::size_t p = server.global.size();
      std::vector<double> dw(p, 0.0), dc(p, 0.0);
      ParamVector delta(server.spec);
      for (std::size_t k = 0; k < received.size(); ++k) {
        deserialize_params(delta, dc_uploads[k]);
        for (std::size_t i = 0; i < p; ++i) {
          dw[i] += double(received[k].values()[i]) - double(server.global.values()[i]);
          dc[i] += double(delta.values()[i]);
        }
      }
      const double share = double(received.size()) / double(clients.size());
      for (std::size_t i = 0; i < p; ++i) {
        server.global.values()[i] =
            float(double(server.global.values()[i]) + dw[i] / double(received.size()));
        server.scaffold_c.values()[i] =
            float(double(server.scaffold_c.values()[i]) + share * dc[i] / double(received.size()));
      }
    } else {
      std::vector<const ParamVector*> refs;
      refs.reserve(received.size());
      for (const auto& r : received) refs.push_back(&r);
      server.global = aggregate_fedavg(refs, weights);
    }
  }

  server.round += 1;
  rec.eval_accuracy = shared_union_accuracy(server.spec, server.global, clients);
  return rec;
}

RoundRecord run_prototype_round(ServerState& server, std::vector<ClientState>& clients,
                                const TaskSpec& task) {
  RoundRecord rec;
  rec.round = server.round;
  const std::vector<std::size_t> chosen = sample_participants(server, clients);
  const std::size_t classes = std::size_t(server.num_classes);
  const std::size_t width = server.spec.embedding_dim();

  const std::vector<std::uint8_t> broadcast = serialize_prototypes(server.prototypes);
  std::vector<std::vector<std::uint8_t>> uploads;

  for (std::size_t idx : chosen) {
    ClientState& cl = clients[idx];
    rec.participants.push_back(cl.client_id);
    rec.downlink_bytes += broadcast.size();
    // personal model: no parameter broadcast, only the prototype table
    LocalResult lr = local_update(cl, server, task, server.round);
    rec.train_loss.push_back(lr.mean_loss);
    if (lr.diverged) {
      rec.diverged.push_back(cl.client_id);
      continue;
    }
    PrototypeResult pr =
        class_prototypes(server.spec, cl.params, cl.batch, cl.train_mask, server.num_classes);
    bool any = false;
    for (auto c : pr.counts) any |= c != 0;
    if (!any)
      throw ConfigError("client " + std::to_string(cl.client_id) +
                        " holds no training samples of any class");
    std::vector<std::uint8_t> up = serialize_prototype_update(pr.prototypes, pr.counts);
    rec.uplink_bytes += up.size();
    uploads.push_back(std::move(up));
  }

  if (!uploads.empty()) {
    std::vector<std::vector<double>> acc(classes, std::vector<double>(width, 0.0));
    std::vector<std::uint64_t> totals(classes, 0);
    Mat<float> protos(classes, width);
    std::vector<std::uint64_t> counts;
    for (const auto& up : uploads) {
      deserialize_prototype_update(up, protos, counts);
      for (std::size_t c = 0; c < classes; ++c) {
        totals[c] += counts[c];
        for (std::size_t j = 0; j < width; ++j)
          acc[c][j] += double(counts[c]) * double(protos(c, j));
      }
    }
    for (std::size_t c = 0; c < classes; ++c) {
      if (totals[c] == 0) continue;  // keep the previous prototype
      for (std::size_t j = 0; j < width; ++j)
        server.prototypes(c, j) = float(acc[c][j] / double(totals[c]));
    }
    server.proto_counts = totals;
  }

  server.round += 1;
  rec.eval_accuracy = personal_union_accuracy(server.spec, clients);
  return rec;
}

}  // namespace

RoundRecord run_round(ServerState& server, std::vector<ClientState>& clients,
                      const TaskSpec& task) {
  const auto t0 = std::chrono::steady_clock::now();
  RoundRecord rec = server.config.algorithm == Aggregator::FedProto
                        ? run_prototype_round(server, clients, task)
                        : run_parameter_round(server, clients, task);
  rec.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

double evaluate_accuracy(const ModelSpec& spec, const ParamVector& params, const Batch& batch,
                         const std::vector<std::uint8_t>& mask) {
  if (mask.size() != batch.n) throw DimensionMismatchError("evaluation mask length mismatch");
  auto [correct, total] = count_correct(spec, params, batch, mask);
  if (total == 0) throw ConfigError("evaluation over an empty node mask");
  return double(correct) / double(total);
}

double union_test_accuracy(const ServerState& server, const std::vector<ClientState>& clients) {
  if (server.config.algorithm == Aggregator::FedProto)
    return personal_union_accuracy(server.spec, clients);
  return shared_union_accuracy(server.spec, server.global, clients);
}

std::vector<double> per_client_test_accuracy(const ServerState& server,
                                             const std::vector<ClientState>& clients) {
  std::vector<double> out;
  out.reserve(clients.size());
  for (const auto& c : clients) {
    const ParamVector& model =
        server.config.algorithm == Aggregator::FedProto ? c.params : server.global;
    auto [correct, total] = count_correct(server.spec, model, c.batch, c.test_mask);
    out.push_back(total == 0 ? std::nan("") : double(correct) / double(total));
  }
  return out;
}

TwoStageReport run_two_stage(ServerState& server, std::vector<ClientState>& clients,
                             const TaskSpec& pretrain_task, int pretrain_rounds,
                             int finetune_epochs, bool finetune_backbone) {
  if (server.config.algorithm == Aggregator::FedProto)
    throw ConfigError("two-stage training needs a parameter-exchanging aggregator");
  if (pretrain_rounds < 0 || finetune_epochs < 0)
    throw ConfigError("negative round or epoch counts");

  TwoStageReport rep;
  for (int r = 0; r < pretrain_rounds; ++r)
    rep.pretrain.push_back(run_round(server, clients, pretrain_task));

  const std::string head_prefix =
      server.spec.arch == Arch::BranchGcn
          ? std::string("head.")
          : "layer" + std::to_string(server.spec.num_layers - 1) + ".";

  for (auto& cl : clients) {
    auto [correct, total] = count_correct(server.spec, server.global, cl.batch, cl.test_mask);
    rep.probe_accuracy.push_back(total == 0 ? std::nan("") : double(correct) / double(total));

    cl.params = server.global;
    cl.adam = AdamState{};  // finetuning is a fresh optimization problem
    ObjectiveConfig obj;
    obj.kind = ObjectiveConfig::Kind::Classification;
    obj.mask = cl.train_mask;
    for (int e = 0; e < finetune_epochs; ++e) {
      GradResult res = objective_grad(server.spec, cl.params, cl.batch, obj);
      if (!std::isfinite(res.loss)) break;
      if (!finetune_backbone) {
        for (const auto& s : cl.params.segments()) {
          if (s.name.rfind(head_prefix, 0) == 0) continue;
          std::fill(res.grad.begin() + s.offset, res.grad.begin() + s.offset + s.size(), 0.0f);
        }
      }
      try {
        if (server.config.optimizer == OptimKind::Sgd)
          sgd_step(cl.params, res.grad, server.config.optim);
        else
          adam_step(cl.params, res.grad, server.config.optim, cl.adam);
      } catch (const NumericError&) {
        break;
      }
      if (!finetune_backbone) {
        // weight decay inside the optimizer moves zero-gradient coordinates,
        // so frozen segments are pinned back to the shared model
        for (const auto& s : cl.params.segments()) {
          if (s.name.rfind(head_prefix, 0) == 0) continue;
          std::copy(server.global.values().begin() + s.offset,
                    server.global.values().begin() + s.offset + s.size(),
                    cl.params.values().begin() + s.offset);
        }
      }
    }
    auto [hit, seen] = count_correct(server.spec, cl.params, cl.batch, cl.test_mask);
    rep.final_accuracy.push_back(seen == 0 ? std::nan("") : double(hit) / double(seen));
  }
  return rep;
}

std::vector<RoundRecord> run_isolated(ServerState& server, std::vector<ClientState>& clients,
                                      const TaskSpec& task, int rounds) {
  std::vector<RoundRecord> records;
  for (int r = 0; r < rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = server.round;
    for (auto& cl : clients) {
      rec.participants.push_back(cl.client_id);
      LocalResult lr = train_epochs(cl, server.spec, server.config, task, server.round, nullptr,
                                    nullptr, nullptr, 0.0);
      rec.train_loss.push_back(lr.mean_loss);
      if (lr.diverged) rec.diverged.push_back(cl.client_id);
    }
    server.round += 1;
    rec.eval_accuracy = personal_union_accuracy(server.spec, clients);
    rec.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<std::uint8_t> serialize_prototypes(const Mat<float>& protos) {
  const std::uint64_t count = protos.size();
  std::vector<std::uint8_t> bytes(8 + 4 * count);
  std::memcpy(bytes.data(), &count, 8);
  std::memcpy(bytes.data() + 8, protos.data().data(), 4 * count);
  return bytes;
}

Mat<float> deserialize_prototypes(const std::vector<std::uint8_t>& bytes, std::size_t rows,
                                  std::size_t cols) {
  if (bytes.size() < 8) throw TruncatedPayloadError("prototype payload shorter than its header");
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data(), 8);
  if (count != rows * cols)
    throw DimensionMismatchError("prototype payload holds " + std::to_string(count) +
                                 " values, expected " + std::to_string(rows * cols));
  if (bytes.size() < 8 + 4 * count) throw TruncatedPayloadError("prototype payload cut short");
  if (bytes.size() > 8 + 4 * count)
    throw DimensionMismatchError("prototype payload has trailing bytes");
  Mat<float> out(rows, cols);
  std::memcpy(out.data().data(), bytes.data() + 8, 4 * count);
  return out;
}

std::vector<std::uint8_t> serialize_prototype_update(const Mat<float>& protos,
                                                     const std::vector<std::uint64_t>& counts) {
  if (counts.size() != protos.rows())
    throw DimensionMismatchError("one count per prototype row required");
  std::vector<std::uint8_t> bytes(4 * protos.size() + 8 * counts.size());
  std::memcpy(bytes.data(), protos.data().data(), 4 * protos.size());
  std::memcpy(bytes.data() + 4 * protos.size(), counts.data(), 8 * counts.size());
  return bytes;
}

void deserialize_prototype_update(const std::vector<std::uint8_t>& bytes, Mat<float>& protos,
                                  std::vector<std::uint64_t>& counts) {
  const std::size_t expect = 4 * protos.size() + 8 * protos.rows();
  if (bytes.size() < expect) throw TruncatedPayloadError("prototype update cut short");
  if (bytes.size() > expect)
    throw DimensionMismatchError("prototype update has trailing bytes");
  std::memcpy(protos.data().data(), bytes.data(), 4 * protos.size());
  counts.resize(protos.rows());
  std::memcpy(counts.data(), bytes.data() + 4 * protos.size(), 8 * protos.rows());
}

}  // namespace mmfgl
