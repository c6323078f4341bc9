#pragma once

// Checkpoint container: 8-byte magic "IBNNCKP1", little-endian u32 header
// length, JSON header (kind, likelihood, K, layer specs, format version),
// then one raw little-endian f32 array per declared tensor, in layer order:
//   ibnn dense: U, b, means, stds
//   ibnn conv:  kernel, bias, means, stds
//   bnnvi dense: w_mean, w_std, b_mean, b_std
//   deterministic dense/conv: U, b
// Values are stored at f32; a save/load/save cycle is byte-identical.

#include <string>

#include "ibnn/model.hpp"
#include "ibnn/random.hpp"

namespace ibnn {

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Overwrites the deterministic weights of `model` from a checkpoint with
// matching layer shapes (any kind; only U and b are read), re-initializes the
// posteriors with init_posterior(sigma0), and optionally freezes U, b.
void load_pretrained(Model& model, const std::string& path, double sigma0, Rng& rng, bool freeze);

}  // namespace ibnn
