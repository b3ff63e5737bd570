#include "reve/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "reve/checkpoint.hpp"
#include "reve/kde.hpp"

namespace reve::runner {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// shortest decimal form that round-trips a double
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double parsed = 0.0;
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    std::sscanf(buf, "%lf", &parsed);
    if (parsed == v) break;
  }
  return buf;
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    return static_cast<std::uint64_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for '" + key + "': " + v);
  }
}

double parse_f64(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for '" + key + "': " + v);
  }
}

std::map<std::string, std::string> parse_kv_list(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("dataset spec: expected key=value, got '" + item + "'");
    }
    out[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
  return out;
}

}  // namespace

// ----------------------------------------------------------------- config

void RunConfig::validate() const {
  if (dataset.empty()) throw std::invalid_argument("config: dataset must be set");
  if (arch.empty()) throw std::invalid_argument("config: arch must be set");
  if (dim_y == 0) throw std::invalid_argument("config: dim_y must be positive");
  if (n_classes < 2) throw std::invalid_argument("config: need at least 2 classes");
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be positive");
  if (epochs == 0) throw std::invalid_argument("config: epochs must be positive");
  if (!(optim.lr_base > 0.0)) throw std::invalid_argument("config: lr_base must be positive");
  if (!(optim.lr_decay > 0.0 && optim.lr_decay <= 1.0)) {
    throw std::invalid_argument("config: lr_decay must lie in (0, 1]");
  }
  if (!(optim.momentum >= 0.0 && optim.momentum < 1.0)) {
    throw std::invalid_argument("config: momentum must lie in [0, 1)");
  }
  if (!(optim.weight_decay >= 0.0)) {
    throw std::invalid_argument("config: weight_decay must be non-negative");
  }
  if (!(aug_hflip >= 0.0 && aug_hflip <= 1.0)) {
    throw std::invalid_argument("config: aug_hflip must lie in [0, 1]");
  }
  reve.validate();
  // the architecture must produce dim_y outputs; checked in build_model
  nn::parse_arch(arch);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "dataset = " << dataset << '\n';
  os << "arch = " << arch << '\n';
  os << "dim_y = " << dim_y << '\n';
  os << "classes = " << n_classes << '\n';
  os << "batch_size = " << batch_size << '\n';
  os << "epochs = " << epochs << '\n';
  os << "seed = " << seed << '\n';
  os << "out_dir = " << out_dir << '\n';
  os << "lr_base = " << fmt_double(optim.lr_base) << '\n';
  os << "lr_decay = " << fmt_double(optim.lr_decay) << '\n';
  os << "momentum = " << fmt_double(optim.momentum) << '\n';
  os << "weight_decay = " << fmt_double(optim.weight_decay) << '\n';
  os << "sigma2 = " << fmt_double(reve.sigma2) << '\n';
  os << "beta = " << fmt_double(reve.beta) << '\n';
  os << "s_samples = " << reve.mc_samples << '\n';
  os << "variance_floor = " << fmt_double(reve.variance_floor) << '\n';
  os << "rank_tolerance = " << fmt_double(reve.rank_tolerance) << '\n';
  os << "svd_refresh_period = " << reve.svd_refresh_period << '\n';
  os << "q_model = " << q_model_to_string(reve.q_model) << '\n';
  os << "gmm_ema = " << fmt_double(reve.gmm_ema) << '\n';
  os << "aug_pad = " << aug_pad << '\n';
  os << "aug_hflip = " << fmt_double(aug_hflip) << '\n';
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    if (key == "dataset") cfg.dataset = value;
    else if (key == "arch") cfg.arch = value;
    else if (key == "dim_y") cfg.dim_y = parse_u64(value, key);
    else if (key == "classes") cfg.n_classes = parse_u64(value, key);
    else if (key == "batch_size") cfg.batch_size = parse_u64(value, key);
    else if (key == "epochs") cfg.epochs = parse_u64(value, key);
    else if (key == "seed") cfg.seed = parse_u64(value, key);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "lr_base") cfg.optim.lr_base = parse_f64(value, key);
    else if (key == "lr_decay") cfg.optim.lr_decay = parse_f64(value, key);
    else if (key == "momentum") cfg.optim.momentum = parse_f64(value, key);
    else if (key == "weight_decay") cfg.optim.weight_decay = parse_f64(value, key);
    else if (key == "sigma2") cfg.reve.sigma2 = parse_f64(value, key);
    else if (key == "beta") cfg.reve.beta = parse_f64(value, key);
    else if (key == "s_samples") cfg.reve.mc_samples = parse_u64(value, key);
    else if (key == "variance_floor") cfg.reve.variance_floor = parse_f64(value, key);
    else if (key == "rank_tolerance") cfg.reve.rank_tolerance = parse_f64(value, key);
    else if (key == "svd_refresh_period") cfg.reve.svd_refresh_period = parse_u64(value, key);
    else if (key == "q_model") cfg.reve.q_model = q_model_from_string(value);
    else if (key == "gmm_ema") cfg.reve.gmm_ema = parse_f64(value, key);
    else if (key == "aug_pad") cfg.aug_pad = parse_u64(value, key);
    else if (key == "aug_hflip") cfg.aug_hflip = parse_f64(value, key);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return from_text(buf.str());
}

// ---------------------------------------------------------------- metrics

const char* const kMetricsHeader =
    "epoch,step,cross_entropy,omega_reve,total_loss,train_error_pct,test_error_pct,"
    "neg_mean_log_q,neg_mean_log_r";

std::string metrics_csv_row(const MetricsRow& row) {
  std::ostringstream os;
  os << row.epoch << ',' << row.step << ',' << fmt_double(row.cross_entropy) << ','
     << fmt_double(row.omega) << ',' << fmt_double(row.total_loss) << ','
     << fmt_double(row.train_error) << ',' << fmt_double(row.test_error) << ','
     << fmt_double(row.neg_mean_log_q) << ',' << fmt_double(row.neg_mean_log_r);
  return os.str();
}

// ------------------------------------------------------------------ model

Model build_model(const RunConfig& config, Rng& init_rng) {
  const auto layers = nn::parse_arch(config.arch);
  // per-sample input shape from the dataset spec, without loading data
  Shape input_shape;
  const std::size_t colon = config.dataset.find(':');
  const std::string kind = config.dataset.substr(0, colon);
  if (kind == "blobs") {
    const auto kv = parse_kv_list(config.dataset.substr(colon + 1));
    std::size_t informative = 2, nuisance = 30;
    if (kv.count("informative")) informative = parse_u64(kv.at("informative"), "informative");
    if (kv.count("nuisance")) nuisance = parse_u64(kv.at("nuisance"), "nuisance");
    input_shape = Shape{informative + nuisance};
  } else if (kind == "idx") {
    const auto kv = parse_kv_list(config.dataset.substr(colon + 1));
    const std::size_t rows = kv.count("rows") ? parse_u64(kv.at("rows"), "rows") : 28;
    const std::size_t cols = kv.count("cols") ? parse_u64(kv.at("cols"), "cols") : 28;
    input_shape = Shape{1, rows, cols};
  } else {
    throw std::invalid_argument("dataset: unknown kind '" + kind + "'");
  }
  nn::EncoderNetwork net(input_shape, layers, init_rng);
  if (net.output_dim() != config.dim_y) {
    throw std::invalid_argument("config: arch produces dim " +
                                std::to_string(net.output_dim()) + " but dim_y = " +
                                std::to_string(config.dim_y));
  }
  nn::DecoderHead head(config.n_classes, config.dim_y, init_rng);
  return Model{std::move(net), std::move(head)};
}

void save_model(const Model& model, const std::string& checkpoint_path) {
  std::vector<std::pair<std::string, Tensor>> entries = model.net.parameters();
  entries.emplace_back("dec.weight", model.head.weight());
  entries.emplace_back("dec.bias", model.head.bias());
  checkpoint::save(checkpoint_path, entries);
}

Model load_model(const RunConfig& config, const std::string& checkpoint_path) {
  Rng scratch(0);
  Model model = build_model(config, scratch);
  auto entries = checkpoint::load(checkpoint_path);
  std::map<std::string, Tensor> by_name(entries.begin(), entries.end());

  auto restore = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("checkpoint: parameter '" + name +
                               "' missing; architecture mismatch");
    }
    if (it->second.shape() != dst.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " +
                               shape_str(it->second.shape()) + ", expected " +
                               shape_str(dst.shape()) + "; architecture mismatch");
    }
    std::copy(it->second.values().begin(), it->second.values().end(),
              dst.values_mut().begin());
    by_name.erase(it);
  };

  for (auto& [name, tensor] : model.net.parameters()) restore(name, tensor);
  restore("dec.weight", model.head.weight());
  restore("dec.bias", model.head.bias());
  if (!by_name.empty()) {
    throw std::runtime_error("checkpoint: unexpected parameter '" + by_name.begin()->first +
                             "'; architecture mismatch");
  }
  return model;
}

// ------------------------------------------------------------------- data

std::pair<data::LabeledDataset, data::LabeledDataset> load_dataset(const RunConfig& config) {
  const std::size_t colon = config.dataset.find(':');
  const std::string kind = config.dataset.substr(0, colon);
  if (kind == "blobs") {
    const auto kv = parse_kv_list(config.dataset.substr(colon + 1));
    data::BlobsSpec spec;
    spec.seed = config.seed;
    for (const auto& [key, value] : kv) {
      if (key == "classes") spec.n_classes = parse_u64(value, key);
      else if (key == "informative") spec.informative = parse_u64(value, key);
      else if (key == "nuisance") spec.nuisance = parse_u64(value, key);
      else if (key == "noise") spec.noise = parse_f64(value, key);
      else if (key == "train") spec.n_train = parse_u64(value, key);
      else if (key == "test") spec.n_test = parse_u64(value, key);
      else if (key == "seed") spec.seed = parse_u64(value, key);
      else throw std::invalid_argument("dataset: unknown blobs key '" + key + "'");
    }
    if (spec.n_classes != config.n_classes) {
      throw std::invalid_argument("dataset: blobs classes does not match config classes");
    }
    return data::make_blobs(spec);
  }
  if (kind == "idx") {
    const auto kv = parse_kv_list(config.dataset.substr(colon + 1));
    auto need = [&](const char* key) {
      auto it = kv.find(key);
      if (it == kv.end())
        throw std::invalid_argument(std::string("dataset: idx needs '") + key + "'");
      return it->second;
    };
    const std::size_t limit = kv.count("limit") ? parse_u64(kv.at("limit"), "limit") : 0;
    data::LabeledDataset train = data::load_idx(need("images"), need("labels"), limit);
    data::LabeledDataset test =
        data::load_idx(need("test_images"), need("test_labels"), limit);
    test.split = "test";
    train.n_classes = test.n_classes = config.n_classes;
    data::normalize_with_train_stats(train, test);
    return {std::move(train), std::move(test)};
  }
  throw std::invalid_argument("dataset: unknown kind '" + kind + "'");
}

// ------------------------------------------------------------------ train

double evaluate(const Model& model, const data::LabeledDataset& dataset) {
  const data::Batch batch = dataset.all();
  const Tensor h = model.net.forward(batch.inputs, false, nullptr);
  const Tensor probs = nn::predict(model.head, h);
  return nn::error_rate_percent(probs, batch.labels);
}

double evaluate_checkpoint(const RunConfig& config, const std::string& checkpoint_path,
                           const data::LabeledDataset& dataset) {
  const Model model = load_model(config, checkpoint_path);
  return evaluate(model, dataset);
}

TrainResult train(const RunConfig& config, std::ostream* log) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);

  Rng master(config.seed);
  Rng init_rng = master.fork(0);
  Rng shuffle_rng = master.fork(1);
  Rng noise_rng = master.fork(2);
  Rng augment_rng = master.fork(3);

  auto [train_set, test_set] = load_dataset(config);
  Model model = build_model(config, init_rng);

  nn::SgdMomentum opt(config.optim.lr_base, config.optim.lr_decay, config.optim.momentum,
                      config.optim.weight_decay);
  opt.register_params(model.net.parameters());
  opt.register_params({{"dec.weight", model.head.weight()}, {"dec.bias", model.head.bias()}});

  const bool image_data = train_set.inputs.rank() == 4;
  const std::size_t n_train = train_set.size();
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::ostringstream metrics;
  metrics << kMetricsHeader << '\n';

  std::optional<GmmParams> ema_state;
  std::size_t step = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with the run's shuffle stream
    for (std::size_t i = n_train; i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }

    double epoch_ce = 0.0, epoch_omega = 0.0, epoch_total = 0.0;
    double epoch_lq = 0.0, epoch_lr = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t stop = std::min(n_train, start + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      data::Batch batch = train_set.batch(idx);
      if (image_data && (config.aug_pad > 0 || config.aug_hflip > 0.0)) {
        batch = data::augment(batch, config.aug_pad, 0, config.aug_hflip, augment_rng);
      }

      model.head.step_projection(config.reve.rank_tolerance, config.reve.svd_refresh_period);

      Tape tape;
      TotalTerms terms = total_objective(batch, model.net, model.head, config.reve, noise_rng,
                                         ema_state ? &*ema_state : nullptr, true);
      if (!std::isfinite(terms.total.value())) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                                 " (epoch " + std::to_string(epoch) + ")");
      }
      tape.backward(terms.total);
      opt.step(epoch);
      if (config.reve.gmm_ema > 0.0 && config.reve.beta > 0.0) ema_state = terms.gmm;

      epoch_ce += terms.cross_entropy;
      epoch_omega += terms.omega;
      epoch_total += terms.total.value();
      epoch_lq += -terms.mean_log_q;
      epoch_lr += -terms.mean_log_r;
      ++batches;
      ++step;
    }

    MetricsRow row;
    row.epoch = epoch;
    row.step = step;
    const double nb = static_cast<double>(batches);
    row.cross_entropy = epoch_ce / nb;
    row.omega = epoch_omega / nb;
    row.total_loss = epoch_total / nb;
    row.neg_mean_log_q = epoch_lq / nb;
    row.neg_mean_log_r = epoch_lr / nb;
    row.train_error = evaluate(model, train_set);
    row.test_error = evaluate(model, test_set);
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << metrics_csv_row(row) << '\n';
    result.rows.push_back(row);
    if (log) {
      (*log) << "epoch " << epoch << " step " << step << " ce " << row.cross_entropy
             << " omega " << row.omega << " train% " << row.train_error << " test% "
             << row.test_error << " wall " << row.wall_seconds << "s\n";
    }
  }

  result.final_train_error = result.rows.back().train_error;
  result.final_test_error = result.rows.back().test_error;

  const fs::path out(config.out_dir);
  result.metrics_path = out / kMetricsFileName;
  result.checkpoint_path = out / kCheckpointFileName;
  result.config_path = out / kConfigFileName;
  {
    std::ofstream mf(result.metrics_path, std::ios::trunc);
    if (!mf) throw std::runtime_error("train: cannot write metrics file");
    mf << metrics.str();
  }
  save_model(model, result.checkpoint_path.string());
  {
    std::ofstream cf(result.config_path, std::ios::trunc);
    if (!cf) throw std::runtime_error("train: cannot write config file");
    cf << config.to_text();
  }
  return result;
}

// ---------------------------------------------------------------- density

void export_density(const RunConfig& config, const std::string& checkpoint_path,
                    const data::LabeledDataset& dataset, const std::vector<std::size_t>& coords,
                    const std::string& bandwidth_rule, const std::string& out_path) {
  if (dataset.size() == 0) throw std::invalid_argument("export_density: empty dataset");
  if (bandwidth_rule != "silverman") {
    throw std::invalid_argument("export_density: unknown bandwidth rule '" + bandwidth_rule +
                                "'");
  }
  Model model = load_model(config, checkpoint_path);
  for (std::size_t c : coords) {
    if (c >= model.head.dim_y()) {
      throw std::invalid_argument("export_density: coordinate " + std::to_string(c) +
                                  " out of range for dim(Y) " +
                                  std::to_string(model.head.dim_y()));
    }
  }
  model.head.refresh_projection(config.reve.rank_tolerance);

  const data::Batch batch = dataset.all();
  const Tensor h = model.net.forward(batch.inputs, false, nullptr);
  const Tensor z = matmul(h, model.head.projection_tensor());
  const std::size_t n = h.shape()[0];
  const std::size_t d = h.shape()[1];

  std::vector<kde::DensityColumn> columns;
  auto hv = h.values();
  auto zv = z.values();
  for (std::size_t c : coords) {
    kde::DensityColumn ycol, zcol;
    ycol.name = "density_y" + std::to_string(c);
    zcol.name = "density_z" + std::to_string(c);
    ycol.samples.resize(n);
    zcol.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      ycol.samples[i] = hv[i * d + c];
      zcol.samples[i] = zv[i * d + c];
    }
    columns.push_back(std::move(ycol));
    columns.push_back(std::move(zcol));
  }

  const kde::DensityTable table = kde::estimate_columns(std::move(columns));
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) throw std::runtime_error("export_density: cannot write '" + out_path + "'");
  os << "grid";
  for (const std::string& name : table.names) os << ' ' << name;
  os << '\n';
  for (std::size_t i = 0; i < table.grid.size(); ++i) {
    os << fmt_double(table.grid[i]);
    for (const auto& density : table.densities) os << ' ' << fmt_double(density[i]);
    os << '\n';
  }
}

}  // namespace reve::runner
