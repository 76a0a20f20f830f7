// Copyright 2026 The AFA Authors
// SPDX-License-Identifier: Apache-2.0

// Trains a short synthetic stream and prints the accuracy matrix and metrics.

#include <iostream>

#include "afa/afa.hpp"

int main() {
  afa::SyntheticSpec spec;
  spec.tasks = 3;
  const afa::SyntheticData data = afa::generate_synthetic(spec);
  const auto tasks = afa::split_by_task(data.train, data.test);

  afa::TrainConfig cfg = afa::TrainConfig::fixture();
  cfg.iterations_abfa = 200;
  cfg.iterations_affa = 100;

  const afa::StreamResult res = afa::run_stream(cfg, tasks, afa::threads_from_env());
  std::cout << afa::matrix_to_csv(res.matrix) << "\n" << afa::metrics(res.matrix).to_table();

  // A single prediction: the selector picks the route, the route picks the features.
  const afa::Predictor predictor(res.state, res.state.class_ids(1));
  const auto& x = tasks[1].test_x.front();
  const afa::Selection sel = predictor.route(x);
  std::cout << "\nsample routed to " << predictor.path_for(sel).to_string() << " (score "
            << sel.score << "), predicted class " << predictor.predict(x) << "\n";
  return 0;
}
