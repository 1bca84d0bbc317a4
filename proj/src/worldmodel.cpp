#include "driftmon/worldmodel.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

namespace driftmon {

namespace {

Mat normalize_inputs(const WorldModel& model, const Mat& inputs) {
  Mat x = inputs;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    x.col(j) = (x.col(j) - model.in_mean).cwiseQuotient(model.in_std);
  return x;
}

}  // namespace

Mat predict_batch(const WorldModel& model, const Mat& inputs) {
  if (inputs.rows() != model.input_dim())
    throw std::invalid_argument("predict_batch: input dimension mismatch");
  Mat x = normalize_inputs(model, inputs);
  Mat h1 = ((model.w1 * x).colwise() + model.b1).array().tanh().matrix();
  Mat h2 = ((model.w2 * h1).colwise() + model.b2).array().tanh().matrix();
  return (model.w3 * h2).colwise() + model.b3;
}

Vec predict(const WorldModel& model, const Vec& state, const Vec& action) {
  if (state.size() != model.obs_dim || action.size() != model.act_dim)
    throw std::invalid_argument("predict: dimension mismatch");
  Vec input(model.input_dim());
  input << state, action;
  Vec x = (input - model.in_mean).cwiseQuotient(model.in_std);
  Vec h1 = (model.w1 * x + model.b1).array().tanh();
  Vec h2 = (model.w2 * h1 + model.b2).array().tanh();
  return model.w3 * h2 + model.b3;
}

double prediction_error(const WorldModel& model, const Vec& state,
                        const Vec& action, const Vec& next_state) {
  if (next_state.size() != model.obs_dim)
    throw std::invalid_argument("prediction_error: dimension mismatch");
  return (predict(model, state, action) - next_state).squaredNorm();
}

BaselineStats baseline_stats(const std::vector<double>& pe) {
  if (pe.size() < 30)
    throw std::invalid_argument("baseline_stats: need at least 30 samples");
  BaselineStats stats;
  stats.count = pe.size();
  stats.mean = mean_of(pe);
  stats.std = population_std(pe);
  stats.variance = stats.std * stats.std;
  std::vector<double> sorted = pe;
  std::sort(sorted.begin(), sorted.end());
  for (int p : {90, 95, 99})
    stats.percentiles[p] = percentile_sorted(sorted, static_cast<double>(p));
  return stats;
}

// ── Training ──────────────────────────────────────────────────────────────

double mlp_loss_and_gradients(const WorldModel& model, const Mat& inputs,
                              const Mat& targets, Gradients* grads) {
  const Eigen::Index n = inputs.cols();
  Mat x = normalize_inputs(model, inputs);
  Mat h1 = ((model.w1 * x).colwise() + model.b1).array().tanh().matrix();
  Mat h2 = ((model.w2 * h1).colwise() + model.b2).array().tanh().matrix();
  Mat out = (model.w3 * h2).colwise() + model.b3;

  Mat resid = out - targets;
  const double denom =
      static_cast<double>(n) * static_cast<double>(model.obs_dim);
  const double loss = resid.squaredNorm() / denom;

  if (grads) {
    Mat dout = resid * (2.0 / denom);
    grads->w3 = dout * h2.transpose();
    grads->b3 = dout.rowwise().sum();
    Mat dz2 = (model.w3.transpose() * dout).array() *
              (1.0 - h2.array().square());
    grads->w2 = dz2.matrix() * h1.transpose();
    grads->b2 = dz2.matrix().rowwise().sum();
    Mat dz1 = (model.w2.transpose() * dz2.matrix()).array() *
              (1.0 - h1.array().square());
    grads->w1 = dz1.matrix() * x.transpose();
    grads->b1 = dz1.matrix().rowwise().sum();
  }
  return loss;
}

namespace {

struct AdamSlot {
  Mat mw1, vw1, mw2, vw2, mw3, vw3;
  Vec mb1, vb1, mb2, vb2, mb3, vb3;

  explicit AdamSlot(const WorldModel& m) {
    mw1 = Mat::Zero(m.w1.rows(), m.w1.cols());
    vw1 = mw1;
    mw2 = Mat::Zero(m.w2.rows(), m.w2.cols());
    vw2 = mw2;
    mw3 = Mat::Zero(m.w3.rows(), m.w3.cols());
    vw3 = mw3;
    mb1 = Vec::Zero(m.b1.size());
    vb1 = mb1;
    mb2 = Vec::Zero(m.b2.size());
    vb2 = mb2;
    mb3 = Vec::Zero(m.b3.size());
    vb3 = mb3;
  }
};

template <typename T>
void adam_update(T& param, T& m, T& v, const T& g, double lr, double t,
                 double weight_decay) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  m = beta1 * m + (1.0 - beta1) * g;
  v = (beta2 * v).array() + (1.0 - beta2) * g.array().square();
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  param.array() -=
      lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + eps) +
            weight_decay * param.array());
}

/// Glorot-uniform init drawn from the stream.
Mat glorot(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat w(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i)
      w(i, j) = limit * (2.0 * rng.next_double() - 1.0);
  return w;
}

}  // namespace

TrainResult train_world_model(const std::vector<Trajectory>& data,
                              Capacity capacity, const TrainSettings& settings,
                              RngStream rng) {
  std::size_t total = 0;
  for (const auto& traj : data) total += traj.size();
  if (total < 1000)
    throw std::invalid_argument(
        "train_world_model: need at least 1000 transitions, got " +
        std::to_string(total));
  if (data.empty()) throw std::invalid_argument("train_world_model: no data");

  const int obs_dim = static_cast<int>(data.front().transitions.front().state.size());
  const int act_dim =
      static_cast<int>(data.front().transitions.front().action.size());
  const int in_dim = obs_dim + act_dim;

  // Held-out split by episode: the trailing fraction of episodes.
  std::size_t holdout_eps = static_cast<std::size_t>(
      std::round(settings.holdout_fraction * static_cast<double>(data.size())));
  holdout_eps = std::min(std::max<std::size_t>(holdout_eps, 1), data.size() - 1);
  const std::size_t train_eps = data.size() - holdout_eps;

  auto fill = [&](std::size_t begin, std::size_t end, Mat& X, Mat& Y) {
    std::size_t count = 0;
    for (std::size_t e = begin; e < end; ++e) count += data[e].size();
    X.resize(in_dim, static_cast<Eigen::Index>(count));
    Y.resize(obs_dim, static_cast<Eigen::Index>(count));
    Eigen::Index col = 0;
    for (std::size_t e = begin; e < end; ++e) {
      for (const Transition& tr : data[e].transitions) {
        X.col(col).head(obs_dim) = tr.state;
        X.col(col).tail(act_dim) = tr.action;
        Y.col(col) = tr.next_state;
        ++col;
      }
    }
  };

  Mat x_train, y_train, x_hold, y_hold;
  fill(0, train_eps, x_train, y_train);
  fill(train_eps, data.size(), x_hold, y_hold);

  WorldModel model;
  model.obs_dim = obs_dim;
  model.act_dim = act_dim;
  model.hidden = hidden_width(capacity);
  model.in_mean = x_train.rowwise().mean();
  Vec var = (x_train.colwise() - model.in_mean)
                .array()
                .square()
                .rowwise()
                .mean();
  model.in_std = var.array().sqrt().max(1e-8);

  model.w1 = glorot(model.hidden, in_dim, rng);
  model.b1 = Vec::Zero(model.hidden);
  model.w2 = glorot(model.hidden, model.hidden, rng);
  model.b2 = Vec::Zero(model.hidden);
  model.w3 = glorot(obs_dim, model.hidden, rng);
  model.b3 = Vec::Zero(obs_dim);

  const Eigen::Index n = x_train.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  AdamSlot adam(model);
  Gradients g;
  double adam_t = 0.0;
  TrainResult result;
  result.initial_train_mse =
      mlp_loss_and_gradients(model, x_train, y_train, nullptr);

  const Eigen::Index batch =
      std::min<Eigen::Index>(settings.batch_size, n);
  Mat xb(in_dim, batch), yb(obs_dim, batch);

  double epoch_loss = result.initial_train_mse;
  double lr = settings.learning_rate;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    if (epoch > 0) lr *= settings.lr_decay;
    // Fisher-Yates shuffle from the stream.
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(rng.next_u64() % (i + 1));
      std::swap(order[i], order[j]);
    }
    double acc = 0.0;
    Eigen::Index batches = 0;
    for (Eigen::Index start = 0; start + batch <= n; start += batch) {
      for (Eigen::Index i = 0; i < batch; ++i) {
        xb.col(i) = x_train.col(order[static_cast<std::size_t>(start + i)]);
        yb.col(i) = y_train.col(order[static_cast<std::size_t>(start + i)]);
      }
      const double loss = mlp_loss_and_gradients(model, xb, yb, &g);
      if (!std::isfinite(loss))
        throw TrainingError("train_world_model: loss diverged (non-finite)");
      acc += loss;
      ++batches;
      adam_t += 1.0;
      adam_update(model.w1, adam.mw1, adam.vw1, g.w1, lr,
                  adam_t, settings.weight_decay);
      adam_update(model.b1, adam.mb1, adam.vb1, g.b1, lr,
                  adam_t, 0.0);
      adam_update(model.w2, adam.mw2, adam.vw2, g.w2, lr,
                  adam_t, settings.weight_decay);
      adam_update(model.b2, adam.mb2, adam.vb2, g.b2, lr,
                  adam_t, 0.0);
      adam_update(model.w3, adam.mw3, adam.vw3, g.w3, lr,
                  adam_t, settings.weight_decay);
      adam_update(model.b3, adam.mb3, adam.vb3, g.b3, lr,
                  adam_t, 0.0);
    }
    if (batches > 0) epoch_loss = acc / static_cast<double>(batches);
  }
  result.final_train_mse = epoch_loss;

  Mat pred = predict_batch(model, x_hold);
  result.holdout_mse =
      (pred - y_hold).squaredNorm() /
      (static_cast<double>(x_hold.cols()) * static_cast<double>(obs_dim));
  if (!std::isfinite(result.holdout_mse))
    throw TrainingError("train_world_model: held-out loss non-finite");
  result.model = std::move(model);
  return result;
}

// ── Persistence ───────────────────────────────────────────────────────────

namespace {

constexpr char kMagic[4] = {'D', 'M', 'W', 'M'};
constexpr std::uint32_t kModelVersion = 1;

void write_bytes(std::ofstream& out, const void* p, std::size_t bytes) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
}

void read_bytes(std::ifstream& in, void* p, std::size_t bytes) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("model file truncated");
}

void write_mat(std::ofstream& out, const Mat& m) {
  std::int64_t rows = m.rows(), cols = m.cols();
  write_bytes(out, &rows, sizeof rows);
  write_bytes(out, &cols, sizeof cols);
  write_bytes(out, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

Mat read_mat(std::ifstream& in) {
  std::int64_t rows = 0, cols = 0;
  read_bytes(in, &rows, sizeof rows);
  read_bytes(in, &cols, sizeof cols);
  if (rows < 0 || cols < 0 || rows > (1 << 20) || cols > (1 << 20))
    throw std::runtime_error("model file corrupt: bad matrix shape");
  Mat m(rows, cols);
  read_bytes(in, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  return m;
}

}  // namespace

void save_world_model(const WorldModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  write_bytes(out, kMagic, sizeof kMagic);
  write_bytes(out, &kModelVersion, sizeof kModelVersion);
  std::int32_t dims[3] = {model.obs_dim, model.act_dim, model.hidden};
  write_bytes(out, dims, sizeof dims);
  write_mat(out, model.in_mean);
  write_mat(out, model.in_std);
  write_mat(out, model.w1);
  write_mat(out, model.b1);
  write_mat(out, model.w2);
  write_mat(out, model.b2);
  write_mat(out, model.w3);
  write_mat(out, model.b3);
  if (!out) throw std::runtime_error("write failed: " + path);
}

WorldModel load_world_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  char magic[4];
  read_bytes(in, magic, sizeof magic);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a model file: " + path);
  std::uint32_t version = 0;
  read_bytes(in, &version, sizeof version);
  if (version != kModelVersion)
    throw std::runtime_error("unsupported model file version " +
                             std::to_string(version));
  std::int32_t dims[3];
  read_bytes(in, dims, sizeof dims);
  WorldModel model;
  model.obs_dim = dims[0];
  model.act_dim = dims[1];
  model.hidden = dims[2];
  model.in_mean = read_mat(in);
  model.in_std = read_mat(in);
  model.w1 = read_mat(in);
  model.b1 = read_mat(in);
  model.w2 = read_mat(in);
  model.b2 = read_mat(in);
  model.w3 = read_mat(in);
  model.b3 = read_mat(in);
  return model;
}

}  // namespace driftmon
