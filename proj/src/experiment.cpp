#include "fcrec/experiment.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fcrec {

namespace {

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::kF3CRec, "f3crec"},
    {Method::kFineTune, "ft"},
    {Method::kReg, "reg"},
    {Method::kKD, "kd"},
    {Method::kWithoutClientCL, "f3crec_wo_cc"},
    {Method::kWithoutAdaptiveReplay, "f3crec_wo_arm"},
    {Method::kWithoutServerCL, "f3crec_wo_sc"},
    {Method::kWithoutItemWiseMean, "f3crec_wo_itm"},
};

// Fraction of users (or items) in each of the static and dynamic segments.
constexpr double kSegmentQuantile = 0.2;

double parse_double(std::string_view key, std::string_view text) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size())
    throw std::invalid_argument(fmt::format("{}: '{}' is not a number", key, text));
  return v;
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v{};
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || p != text.data() + text.size())
    throw std::invalid_argument(fmt::format("{}: '{}' is not an integer", key, text));
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw std::invalid_argument(fmt::format("{}: '{}' is not a boolean", key, text));
}

std::string_view schedule_name(ShiftSchedule s) {
  return s == ShiftSchedule::kPerBatch ? "batch" : "epoch";
}

void append_sorted(std::vector<ItemId>& into, const std::vector<Interaction>& xs) {
  for (const auto& x : xs) into.push_back(x.item);
  std::sort(into.begin(), into.end());
  into.erase(std::unique(into.begin(), into.end()), into.end());
}

void append_all(ExclusionMap& into, const UserInteractions& xs) {
  for (const auto& [u, list] : xs) append_sorted(into[u], list);
}

UserScorer scorer_for(const ClientPool& pool, const ItemTableD& items) {
  return [&pool, &items](UserId u) -> std::optional<Eigen::VectorXd> {
    if (!pool.has_user(u)) return std::nullopt;
    return pool.logits(u, items);
  };
}

std::map<UserId, double> per_user_ndcg(const EvalReport& report) {
  std::map<UserId, double> out;
  for (const auto& m : report.per_user) out[m.user] = m.ndcg;
  return out;
}

SegmentDegradation segment_rate(std::span<const UserId> users, const std::map<UserId, double>& before,
                                const std::map<UserId, double>& after) {
  SegmentDegradation s;
  s.users = users.size();
  if (users.empty()) return s;
  for (UserId u : users) {
    s.before += before.at(u);
    s.after += after.at(u);
  }
  s.before /= static_cast<double>(users.size());
  s.after /= static_cast<double>(users.size());
  s.rate = s.before > 0.0 ? degradation_rate(s.before, s.after) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

// Run at the end of block t >= 1, before clients refresh their retained lists.
ItemChangeAnalysis analyze_item_changes(const GlobalState& global, const ClientPool& pool,
                                        std::span<const UserId> users, int block) {
  ItemChangeAnalysis out;
  out.block = block;
  const Eigen::Index n_old = global.previous_block.size();
  std::vector<std::pair<double, ItemId>> order;
  for (Eigen::Index r = 0; r < n_old; ++r)
    order.emplace_back(knowledge_shift(global.previous_block.rows().row(r), global.current.rows().row(r)),
                       global.previous_block.index().id(r));
  std::sort(order.begin(), order.end());
  const auto c = static_cast<std::size_t>(std::floor(kSegmentQuantile * static_cast<double>(order.size()) + 1e-9));
  std::set<ItemId> static_items, dynamic_items;
  for (std::size_t i = 0; i < c; ++i) static_items.insert(order[i].second);
  for (std::size_t i = order.size() - c; i < order.size(); ++i) dynamic_items.insert(order[i].second);

  std::vector<std::pair<std::size_t, std::size_t>> st, dy;
  for (UserId u : users) {
    const ClientState& state = pool.state(u);
    if (!state.retained || !state.train_items.empty()) continue;
    ++out.users;
    const Eigen::VectorXd logits = pool.logits(u, global.current);
    for (ItemId id : state.retained->top_items) {
      const bool is_static = static_items.count(id) != 0;
      if (!is_static && !dynamic_items.count(id)) continue;
      const std::size_t now = rank_in(logits, global.current.index(), global.current.index().row(id));
      (is_static ? st : dy).emplace_back(state.retained->prev_ranks.at(id), now);
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.static_rate = st.empty() ? nan : item_ranking_change_rate(st);
  out.dynamic_rate = dy.empty() ? nan : item_ranking_change_rate(dy);
  return out;
}

}  // namespace

std::string_view method_name(Method m) {
  for (const auto& [k, v] : kMethodNames)
    if (k == m) return v;
  throw std::invalid_argument("unknown method");
}

Method parse_method(std::string_view name) {
  for (const auto& [k, v] : kMethodNames)
    if (v == name) return k;
  throw std::invalid_argument(fmt::format("unknown method '{}'", name));
}

std::string_view backbone_name(BackboneKind b) { return b == BackboneKind::kFedMF ? "fedmf" : "fedncf1"; }

BackboneKind parse_backbone(std::string_view name) {
  if (name == "fedmf") return BackboneKind::kFedMF;
  if (name == "fedncf1" || name == "fedncf") return BackboneKind::kFedNCF;
  throw std::invalid_argument(fmt::format("unknown backbone '{}'", name));
}

MethodTraits method_traits(Method m) {
  switch (m) {
    case Method::kF3CRec: return {ReplayMode::kAdaptive, RetentionMode::kItemWise, false};
    case Method::kFineTune: return {ReplayMode::kNone, RetentionMode::kNone, false};
    case Method::kReg: return {ReplayMode::kNone, RetentionMode::kNone, true};
    case Method::kKD: return {ReplayMode::kFull, RetentionMode::kNone, false};
    case Method::kWithoutClientCL: return {ReplayMode::kNone, RetentionMode::kItemWise, false};
    case Method::kWithoutAdaptiveReplay: return {ReplayMode::kFull, RetentionMode::kItemWise, false};
    case Method::kWithoutServerCL: return {ReplayMode::kAdaptive, RetentionMode::kNone, false};
    case Method::kWithoutItemWiseMean: return {ReplayMode::kAdaptive, RetentionMode::kUniform, false};
  }
  throw std::invalid_argument("unknown method");
}

void ExperimentConfig::validate() const {
  auto fail = [](std::string_view field, std::string_view why) {
    throw std::invalid_argument(fmt::format("{}: {}", field, why));
  };
  if (dim < 1) fail("dim", "must be >= 1");
  if (top_n < 1) fail("top_n", "must be >= 1");
  if (eval_k < 1) fail("eval_k", "must be >= 1");
  if (!(eps >= 0.0)) fail("eps", "must be >= 0");
  if (!(beta >= 0.0 && beta < 1.0)) fail("beta", "must lie in [0, 1)");
  if (!(lambda_kd >= 0.0)) fail("lambda_kd", "must be >= 0");
  if (!(reg_mu >= 0.0)) fail("reg_mu", "must be >= 0");
  if (!(lr > 0.0)) fail("lr", "must be > 0");
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (rounds < 1) fail("rounds", "must be >= 1");
  if (base_rounds < 1) fail("base_rounds", "must be >= 1");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) fail("client_fraction", "must lie in (0, 1]");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (negative_ratio < 1) fail("negative_ratio", "must be >= 1");
  if (!(init_scale > 0.0)) fail("init_scale", "must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  if (!(noise >= 0.0)) fail("noise", "must be >= 0");
  if (!(base_fraction > 0.0 && base_fraction < 1.0)) fail("base_fraction", "must lie in (0, 1)");
  if (n_incremental < 1) fail("n_incremental", "must be >= 1");
}

ClientConfig ExperimentConfig::client_config() const {
  const MethodTraits traits = method_traits(method);
  ClientConfig c;
  c.backbone = backbone;
  c.dim = dim;
  c.init_scale = init_scale;
  c.lr = lr;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.negative_ratio = negative_ratio;
  c.mean_rec_loss = mean_rec_loss;
  c.replay = traits.replay;
  c.lambda_kd = traits.replay == ReplayMode::kNone ? 0.0 : lambda_kd;
  c.eps = eps;
  c.top_n = top_n;
  c.top_n_excludes_train = top_n_excludes_train;
  c.shift_schedule = shift_schedule;
  c.reg_mu = traits.regularize ? reg_mu : 0.0;
  c.weight_decay = weight_decay;
  c.noise_lambda = noise;
  c.seed = seed;
  return c;
}

ServerConfig ExperimentConfig::server_config() const {
  ServerConfig s;
  s.client_fraction = client_fraction;
  s.retention = method_traits(method).retention;
  s.beta = beta;
  s.init_scale = init_scale;
  s.dim = dim;
  s.seed = seed;
  s.threads = threads;
  return s;
}

DatasetOptions ExperimentConfig::dataset_options() const {
  DatasetOptions o;
  o.path = dataset;
  o.schema = schema;
  o.min_user = min_user;
  o.min_item = min_item;
  o.base_fraction = base_fraction;
  o.n_incremental = n_incremental;
  o.seed = seed;
  return o;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::fields() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"dataset", dataset.string()},
      {"dataset_name", dataset_name},
      {"delimiter", schema.delimiter == '\t' ? std::string("tab") : std::string(1, schema.delimiter)},
      {"user_column", std::to_string(schema.user_column)},
      {"item_column", std::to_string(schema.item_column)},
      {"timestamp_column", std::to_string(schema.timestamp_column)},
      {"has_header", b(schema.has_header)},
      {"min_user", std::to_string(min_user)},
      {"min_item", std::to_string(min_item)},
      {"base_fraction", fmt::format("{}", base_fraction)},
      {"n_incremental", std::to_string(n_incremental)},
      {"method", std::string(method_name(method))},
      {"backbone", std::string(backbone_name(backbone))},
      {"dim", std::to_string(dim)},
      {"top_n", std::to_string(top_n)},
      {"eps", fmt::format("{}", eps)},
      {"beta", fmt::format("{}", beta)},
      {"lambda_kd", fmt::format("{}", lambda_kd)},
      {"reg_mu", fmt::format("{}", reg_mu)},
      {"lr", fmt::format("{}", lr)},
      {"epochs", std::to_string(epochs)},
      {"rounds", std::to_string(rounds)},
      {"base_rounds", std::to_string(base_rounds)},
      {"client_fraction", fmt::format("{}", client_fraction)},
      {"negative_ratio", std::to_string(negative_ratio)},
      {"batch_size", std::to_string(batch_size)},
      {"mean_rec_loss", b(mean_rec_loss)},
      {"init_scale", fmt::format("{}", init_scale)},
      {"weight_decay", fmt::format("{}", weight_decay)},
      {"noise", fmt::format("{}", noise)},
      {"shift_schedule", std::string(schedule_name(shift_schedule))},
      {"top_n_excludes_train", b(top_n_excludes_train)},
      {"exclude_valid", b(exclude_valid)},
      {"select_best_round", b(select_best_round)},
      {"eval_k", std::to_string(eval_k)},
      {"analyze", b(analyze)},
      {"seed", std::to_string(seed)},
      {"threads", std::to_string(threads)},
      {"out", out.string()},
  };
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  if (key == "dataset") dataset = std::string(value);
  else if (key == "dataset_name") dataset_name = std::string(value);
  else if (key == "delimiter") {
    if (value == "tab" || value == "\\t") schema.delimiter = '\t';
    else if (value.size() == 1) schema.delimiter = value[0];
    else throw std::invalid_argument("delimiter: expected one character or 'tab'");
  }
  else if (key == "user_column") schema.user_column = parse_int<int>(key, value);
  else if (key == "item_column") schema.item_column = parse_int<int>(key, value);
  else if (key == "timestamp_column") schema.timestamp_column = parse_int<int>(key, value);
  else if (key == "has_header") schema.has_header = parse_bool(key, value);
  else if (key == "min_user") min_user = parse_int<std::size_t>(key, value);
  else if (key == "min_item") min_item = parse_int<std::size_t>(key, value);
  else if (key == "base_fraction") base_fraction = parse_double(key, value);
  else if (key == "n_incremental") n_incremental = parse_int<int>(key, value);
  else if (key == "method") method = parse_method(value);
  else if (key == "backbone") backbone = parse_backbone(value);
  else if (key == "dim") dim = parse_int<Eigen::Index>(key, value);
  else if (key == "top_n") top_n = parse_int<std::size_t>(key, value);
  else if (key == "eps") eps = parse_double(key, value);
  else if (key == "beta") beta = parse_double(key, value);
  else if (key == "lambda_kd") lambda_kd = parse_double(key, value);
  else if (key == "reg_mu") reg_mu = parse_double(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "epochs") epochs = parse_int<int>(key, value);
  else if (key == "rounds") rounds = parse_int<int>(key, value);
  else if (key == "base_rounds") base_rounds = parse_int<int>(key, value);
  else if (key == "client_fraction") client_fraction = parse_double(key, value);
  else if (key == "negative_ratio") negative_ratio = parse_int<std::size_t>(key, value);
  else if (key == "batch_size") batch_size = parse_int<std::size_t>(key, value);
  else if (key == "mean_rec_loss") mean_rec_loss = parse_bool(key, value);
  else if (key == "init_scale") init_scale = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "noise") noise = parse_double(key, value);
  else if (key == "shift_schedule") {
    if (value == "batch") shift_schedule = ShiftSchedule::kPerBatch;
    else if (value == "epoch") shift_schedule = ShiftSchedule::kPerEpoch;
    else throw std::invalid_argument("shift_schedule: expected 'batch' or 'epoch'");
  }
  else if (key == "top_n_excludes_train") top_n_excludes_train = parse_bool(key, value);
  else if (key == "exclude_valid") exclude_valid = parse_bool(key, value);
  else if (key == "select_best_round") select_best_round = parse_bool(key, value);
  else if (key == "eval_k") eval_k = parse_int<std::size_t>(key, value);
  else if (key == "analyze") analyze = parse_bool(key, value);
  else if (key == "seed") seed = parse_int<std::uint64_t>(key, value);
  else if (key == "threads") threads = parse_int<unsigned>(key, value);
  else if (key == "out") out = std::string(value);
  else throw std::invalid_argument(fmt::format("unknown config key '{}'", key));
}

ExperimentResult run_experiment(const ExperimentConfig& config, const PreparedData& data) {
  config.validate();
  if (data.blocks.empty()) throw std::invalid_argument("run_experiment: no data blocks");

  const ServerConfig server = config.server_config();
  ClientPool pool(config.client_config());
  Rng sampling = make_stream(config.seed, "sampling");
  ExperimentResult result;

  const DataBlock& base = data.blocks.front();
  pool.register_users(base.new_users);
  GlobalState global = init_global(base.new_items, server);

  // Items each user has seen in train (and valid) of all blocks so far.
  ExclusionMap seen;
  ExclusionMap base_exclusions;
  std::map<UserId, double> base_before;
  std::map<UserId, double> shifts;

  std::vector<double> block_ndcg, block_recall, block_valid;
  for (const DataBlock& block : data.blocks) {
    const int t = block.index;
    if (t > 0) advance_block(global, pool, block, server);
    pool.begin_block(block);

    ExclusionMap valid_excl = seen;
    append_all(valid_excl, block.train);
    append_all(seen, block.train);
    if (config.exclude_valid) append_all(seen, block.valid);

    std::optional<double> best_score;
    std::optional<ItemTableD> best_items;
    std::map<UserId, PrivateParams> best_params;

    const int n_rounds = t == 0 ? config.base_rounds : config.rounds;
    for (int r = 0; r < n_rounds; ++r) {
      result.rounds.push_back(run_round(global, pool, server, sampling));

      if (config.analyze && t == 1 && r == 0) {
        const DataBlock& b0 = data.blocks.front();
        for (UserId u : block.users) {
          if (!b0.users.count(u) || !base_before.count(u)) continue;
          if (auto s = pool.current_shift(u, global.current)) shifts[u] = static_cast<double>(*s);
        }
      }

      if (config.select_best_round && !block.valid.empty()) {
        const EvalReport v = full_ranking_eval(scorer_for(pool, global.current), global.current.index(),
                                               block.valid, valid_excl, config.eval_k, t);
        if (!v.results.empty() && (!best_score || v.results.front().value > *best_score)) {
          best_score = v.results.front().value;
          best_items = global.current;
          best_params = pool.snapshot();
        }
      }
    }
    if (best_items) {
      global.current = std::move(*best_items);
      pool.restore(best_params);
    }

    const EvalReport report = full_ranking_eval(scorer_for(pool, global.current), global.current.index(),
                                                block.test, seen, config.eval_k, t);
    for (const auto& e : report.results) result.evals.push_back(e);
    if (t > 0 && report.results.size() == 2) {
      block_ndcg.push_back(report.results[0].value);
      block_recall.push_back(report.results[1].value);
      const EvalReport v = full_ranking_eval(scorer_for(pool, global.current), global.current.index(),
                                             block.valid, valid_excl, config.eval_k, t);
      if (!v.results.empty()) block_valid.push_back(v.results.front().value);
    }

    if (config.analyze) {
      if (t == 0) {
        base_exclusions = seen;
        base_before = per_user_ndcg(report);
      } else if (t == 1 && !shifts.empty()) {
        const EvalReport after = full_ranking_eval(scorer_for(pool, global.current), global.current.index(),
                                                   data.blocks.front().test, base_exclusions,
                                                   config.eval_k, 0);
        const auto base_after = per_user_ndcg(after);
        std::erase_if(shifts, [&](const auto& kv) { return !base_after.count(kv.first); });
        if (!shifts.empty()) {
          const UserSegments seg = segment_users_by_shift(shifts, kSegmentQuantile);
          result.degradation = DegradationAnalysis{segment_rate(seg.static_users, base_before, base_after),
                                                   segment_rate(seg.dynamic_users, base_before, base_after)};
        }
      }
      if (t > 0) {
        std::vector<UserId> users(block.accumulated_users.begin(), block.accumulated_users.end());
        result.item_changes.push_back(analyze_item_changes(global, pool, users, t));
      }
    }
  }

  auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  result.avg_ndcg = mean(block_ndcg);
  result.avg_recall = mean(block_recall);
  result.avg_valid_ndcg = mean(block_valid);
  result.failed_updates = pool.failures();
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  return run_experiment(config, prepare_dataset(config.dataset_options()));
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_config_comments(std::ostream& out, const ExperimentConfig& config) {
  for (const auto& [k, v] : config.fields()) fmt::print(out, "# {}={}\n", k, v);
}

}  // namespace

void write_results(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto method = method_name(config.method);
  const auto backbone = backbone_name(config.backbone);
  {
    auto out = open_out(dir / "results.tsv");
    write_config_comments(out, config);
    write_eval_header(out);
    for (const auto& e : result.evals)
      write_eval_row(out, method, backbone, config.dataset_name, e, config.seed);
  }
  {
    auto out = open_out(dir / "summary.tsv");
    fmt::print(out, "method\tbackbone\tdataset\tseed\tavg_ndcg@{0}\tavg_recall@{0}\tfailed_updates\n",
               config.eval_k);
    fmt::print(out, "{}\t{}\t{}\t{}\t{:.6f}\t{:.6f}\t{}\n", method, backbone, config.dataset_name,
               config.seed, result.avg_ndcg, result.avg_recall, result.failed_updates);
  }
  {
    auto out = open_out(dir / "rounds.tsv");
    write_round_report_header(out);
    for (const auto& r : result.rounds) write_round_report(out, r);
  }
  {
    auto out = open_out(dir / "manifest.txt");
    for (const auto& [k, v] : config.fields()) fmt::print(out, "{}={}\n", k, v);
  }
  if (result.degradation || !result.item_changes.empty()) {
    auto out = open_out(dir / "analysis.tsv");
    fmt::print(out, "analysis\tblock\tsegment\tusers\tbefore\tafter\trate\n");
    if (const auto& d = result.degradation) {
      fmt::print(out, "user_degradation\t1\tstatic\t{}\t{:.6f}\t{:.6f}\t{:.6f}\n", d->static_users.users,
                 d->static_users.before, d->static_users.after, d->static_users.rate);
      fmt::print(out, "user_degradation\t1\tdynamic\t{}\t{:.6f}\t{:.6f}\t{:.6f}\n", d->dynamic_users.users,
                 d->dynamic_users.before, d->dynamic_users.after, d->dynamic_users.rate);
    }
    for (const auto& c : result.item_changes) {
      fmt::print(out, "item_rank_change\t{}\tstatic\t{}\t\t\t{:.6f}\n", c.block, c.users, c.static_rate);
      fmt::print(out, "item_rank_change\t{}\tdynamic\t{}\t\t\t{:.6f}\n", c.block, c.users, c.dynamic_rate);
    }
  }
}

ParameterGrid parse_grid(std::span<const std::string> specs) {
  ParameterGrid grid;
  for (const std::string& spec : specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw std::invalid_argument(fmt::format("grid spec '{}' is not key=v1,v2,...", spec));
    std::string key = spec.substr(0, eq);
    std::vector<double> values;
    std::stringstream list(spec.substr(eq + 1));
    for (std::string item; std::getline(list, item, ',');) values.push_back(parse_double(key, item));
    if (values.empty()) throw std::invalid_argument(fmt::format("grid spec '{}' has no values", spec));
    grid.emplace_back(std::move(key), std::move(values));
  }
  return grid;
}

ExperimentConfig apply_grid_point(ExperimentConfig config,
                                  const std::vector<std::pair<std::string, double>>& point) {
  for (const auto& [key, value] : point) {
    // Integer-valued keys must receive integral grid values.
    const bool integral = std::floor(value) == value;
    config.set(key, integral && std::abs(value) < 1e15 ? fmt::format("{}", static_cast<long long>(value))
                                                        : fmt::format("{}", value));
  }
  config.validate();
  return config;
}

namespace {

std::vector<SweepPoint> sweep_impl(const ExperimentConfig& config, const ParameterGrid& grid,
                                   const PreparedData* shared) {
  std::map<std::uint64_t, PreparedData> by_seed;
  auto data_for = [&](const ExperimentConfig& c) -> const PreparedData& {
    if (shared && c.seed == config.seed) return *shared;
    auto it = by_seed.find(c.seed);
    if (it == by_seed.end()) it = by_seed.emplace(c.seed, prepare_dataset(c.dataset_options())).first;
    return it->second;
  };
  std::vector<SweepPoint> points;
  std::vector<std::size_t> at(grid.size(), 0);
  for (;;) {
    std::vector<std::pair<std::string, double>> values;
    for (std::size_t i = 0; i < grid.size(); ++i) values.emplace_back(grid[i].first, grid[i].second[at[i]]);
    const ExperimentConfig point = apply_grid_point(config, values);
    points.push_back({values, run_experiment(point, data_for(point))});

    std::size_t i = grid.size();
    while (i > 0) {
      --i;
      if (++at[i] < grid[i].second.size()) break;
      at[i] = 0;
      if (i == 0) return points;
    }
    if (grid.empty()) return points;
  }
}

}  // namespace

std::vector<SweepPoint> sweep(const ExperimentConfig& config, const ParameterGrid& grid,
                              const PreparedData& data) {
  return sweep_impl(config, grid, &data);
}

std::vector<SweepPoint> sweep(const ExperimentConfig& config, const ParameterGrid& grid) {
  config.validate();
  return sweep_impl(config, grid, nullptr);
}

void write_sweep(const ExperimentConfig& config, std::span<const SweepPoint> points,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto out = open_out(dir / "sweep.tsv");
  write_config_comments(out, config);
  if (points.empty()) return;
  for (const auto& [k, v] : points.front().values) fmt::print(out, "{}\t", k);
  fmt::print(out, "avg_valid_ndcg@{0}\tavg_ndcg@{0}\tavg_recall@{0}\tfailed_updates\n", config.eval_k);
  for (const auto& p : points) {
    for (const auto& [k, v] : p.values) fmt::print(out, "{}\t", v);
    fmt::print(out, "{:.6f}\t{:.6f}\t{:.6f}\t{}\n", p.result.avg_valid_ndcg, p.result.avg_ndcg,
               p.result.avg_recall, p.result.failed_updates);
  }
}

double relative_improvement(double value, double baseline) {
  if (baseline == 0.0) throw std::domain_error("relative_improvement: zero baseline");
  return (value - baseline) / baseline;
}

std::string report(std::span<const std::filesystem::path> result_files) {
  // (backbone, dataset, metric) -> method -> block -> values over seeds
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::map<std::string, std::map<int, std::vector<double>>>> table;
  for (const auto& path : result_files) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    bool header = false;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      if (!header) {
        header = true;
        continue;
      }
      std::vector<std::string> cols;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
      if (cols.size() != 7) throw std::runtime_error(fmt::format("{}: malformed row '{}'", path.string(), line));
      table[{cols[1], cols[2], cols[4]}][cols[0]][parse_int<int>("block", cols[3])].push_back(
          parse_double("value", cols[5]));
    }
  }

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };

  std::string out;
  for (const auto& [key, methods] : table) {
    const auto& [backbone, dataset, metric] = key;
    std::set<int> blocks;
    for (const auto& [m, per_block] : methods)
      for (const auto& [b, v] : per_block) blocks.insert(b);
    out += fmt::format("{} {} {}\nmethod", dataset, backbone, metric);
    for (int b : blocks) out += fmt::format("\tD{}", b);
    out += "\tavg\timpr_vs_ft\n";

    std::map<std::string, double> averages;
    for (const auto& [m, per_block] : methods) {
      double sum = 0.0;
      int n = 0;
      for (const auto& [b, v] : per_block)
        if (b > 0) sum += mean(v), ++n;
      averages[m] = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    }
    for (const auto& [m, per_block] : methods) {
      out += m;
      for (int b : blocks) {
        auto it = per_block.find(b);
        out += it == per_block.end() ? "\t-" : fmt::format("\t{:.4f}", mean(it->second));
      }
      out += fmt::format("\t{:.4f}", averages[m]);
      auto ft = averages.find("ft");
      if (ft != averages.end() && m != "ft" && ft->second > 0.0)
        out += fmt::format("\t{:+.2f}%", 100.0 * relative_improvement(averages[m], ft->second));
      else
        out += "\t-";
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

}  // namespace fcrec
