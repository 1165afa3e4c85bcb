#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>

#include "cycledeform/errors.hpp"
#include "cycledeform/losses.hpp"

namespace cycledeform {

enum class Precision { F32, F64 };

inline std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::F32;
  if (s == "f64") return Precision::F64;
  throw InvalidArgument("precision must be f32 or f64, got '" + s + "'");
}

/// Training hyperparameters. Epochs are counted from 0.
struct TrainConfig {
  int epochs = 500;
  double lr = 0.01;
  // Step multiplier for the parameter predictor. Its outputs are the scales of
  // seven chained modules, so a full-size Adam step compounds across them.
  // 0.1 still collapsed the map in the first epoch once the cycle terms were
  // switched off; 0.03 trains with or without them.
  double predictor_lr_scale = 0.03;
  int lr_drop_epoch = 400;
  double lr_drop_factor = 10.0;
  int sr_cutoff_epoch = 30;
  int knn_k = 20;
  double lambda_cy = 1.0;  // inf: cycle terms only
  int points_per_cloud = 1024;
  int triplets_per_batch = 8;
  std::uint64_t seed = 0;
  Precision precision = Precision::F32;
  bool random_triplets = false;
  bool per_part_chamfer = false;
  int checkpoint_every = 0;  // 0: only at the end
  int threads = 1;

  void validate() const {
    if (epochs < 1 || knn_k < 1 || points_per_cloud < 1 || triplets_per_batch < 1 || threads < 1)
      throw InvalidArgument("epochs, knn-k, points, batch and threads must be positive");
    if (lr_drop_epoch < 0 || lr_drop_epoch >= epochs) throw InvalidArgument("lr-drop-epoch must lie in [0, epochs)");
    if (!(lr > 0) || !(lr_drop_factor > 0) || !(predictor_lr_scale > 0))
      throw InvalidArgument("lr, lr-drop-factor and predictor-lr-scale must be positive");
    if (sr_cutoff_epoch < 0 || checkpoint_every < 0) throw InvalidArgument("sr-cutoff and checkpoint-every must be >= 0");
    if (!(lambda_cy >= 0)) throw InvalidArgument("lambda-cy must be >= 0");
  }

  double lr_at(int epoch) const { return epoch < lr_drop_epoch ? lr : lr / lr_drop_factor; }

  LossWeights loss_weights() const { return {lambda_cy, sr_cutoff_epoch, per_part_chamfer}; }

  /// `key = value` lines, keys spelled like the CLI flags. Doubles are written
  /// with round-trip precision so a parsed config is identical.
  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "epochs = " << epochs << '\n'
       << "lr = " << lr << '\n'
       << "predictor-lr-scale = " << predictor_lr_scale << '\n'
       << "lr-drop-epoch = " << lr_drop_epoch << '\n'
       << "lr-drop-factor = " << lr_drop_factor << '\n'
       << "sr-cutoff = " << sr_cutoff_epoch << '\n'
       << "knn-k = " << knn_k << '\n'
       << "lambda-cy = " << (std::isinf(lambda_cy) ? std::string("inf") : num(lambda_cy)) << '\n'
       << "points = " << points_per_cloud << '\n'
       << "batch = " << triplets_per_batch << '\n'
       << "seed = " << seed << '\n'
       << "precision = " << to_string(precision) << '\n'
       << "random-triplets = " << (random_triplets ? "true" : "false") << '\n'
       << "per-part-chamfer = " << (per_part_chamfer ? "true" : "false") << '\n'
       << "checkpoint-every = " << checkpoint_every << '\n';
    return os.str();
  }

  /// Applies one `key = value` setting; unknown keys are rejected.
  void set(const std::string& key, const std::string& value) {
    try {
      if (key == "epochs") epochs = std::stoi(value);
      else if (key == "lr") lr = std::stod(value);
      else if (key == "predictor-lr-scale") predictor_lr_scale = std::stod(value);
      else if (key == "lr-drop-epoch") lr_drop_epoch = std::stoi(value);
      else if (key == "lr-drop-factor") lr_drop_factor = std::stod(value);
      else if (key == "sr-cutoff") sr_cutoff_epoch = std::stoi(value);
      else if (key == "knn-k") knn_k = std::stoi(value);
      else if (key == "lambda-cy") lambda_cy = parse_weight(value);
      else if (key == "points") points_per_cloud = std::stoi(value);
      else if (key == "batch") triplets_per_batch = std::stoi(value);
      else if (key == "seed") seed = std::stoull(value);
      else if (key == "precision") precision = parse_precision(value);
      else if (key == "random-triplets") random_triplets = parse_bool(value);
      else if (key == "per-part-chamfer") per_part_chamfer = parse_bool(value);
      else if (key == "checkpoint-every") checkpoint_every = std::stoi(value);
      else if (key == "threads") threads = std::stoi(value);
      else throw InvalidArgument("unknown config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw InvalidArgument("bad value '" + value + "' for config key '" + key + "'");
    }
  }

  static TrainConfig from_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        if (trim(line).empty()) continue;
        throw InvalidArgument("config line without '=': " + line);
      }
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static double parse_weight(const std::string& v) {
    if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
    return std::stod(v);
  }

 private:
  static std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }

  static bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InvalidArgument("expected true/false, got '" + v + "'");
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }
};

}  // namespace cycledeform
