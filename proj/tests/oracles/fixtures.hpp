#pragma once

#include "wtpose/config.hpp"

namespace fixture {

// Small enough to train a few steps inside a unit test.
inline wtpose::RunConfig tiny_run(int images = 4) {
  wtpose::RunConfig c;
  auto& b = c.model.backbone;
  b.stage_channels = {4, 8, 8, 8};
  b.stage_blocks = {1, 1, 1, 1};
  b.stem_channels = 4;
  b.low_level_channels = 6;
  b.head_dim = 4;
  b.mlp_ratio = 2;
  auto& w = c.model.wtm;
  w.channels = 8;
  w.heads = 2;
  w.mlp_ratio = 2;
  w.low_level_channels = 6;
  w.out_channels = 8;
  c.data.input_height = 64;
  c.data.input_width = 64;
  c.model.wtm = w.fitted_to(16, 16);
  c.data.synth.num_images = images;
  c.data.synth.width = 64;
  c.data.synth.height = 64;
  c.optim.lr = 1e-3;
  c.optim.weight_decay = 1e-4;
  c.optim.batch_size = 2;
  c.optim.epochs = 2;
  c.optim.decay_epochs = {};
  c.eval_every = 1;
  return c;
}

}  // namespace fixture
