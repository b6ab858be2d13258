#pragma once

#include <optional>
#include <string>

#include "deepred/adam.hpp"
#include "deepred/model.hpp"

namespace deepred {

// Model checkpoint layout (all integers little-endian, all floats f64 LE):
//
//   magic  "DPRDMDL1"
//   u32    version (1)
//   u32    flags: bits 0-1 delta transform (0 raw, 1 log decay),
//                 bit 2 pooling (0 max, 1 mean), bit 3 theta enabled,
//                 bit 4 static mode, bit 5 optimizer state present
//   u64    d, hidden, k
//   f64    delta_scale
//   u64    U, I
//   f64[]  embedding table rows ((U+I+1) x d)
//   f64[]  gate tensors for z, r, n in order w_input, w_delta, w_state,
//          b_input, b_delta, b_state
//   f64[]  theta (hidden x hidden), only when bit 3 is set
//   [optimizer state: u64 step, then m and v for every tensor above in the
//    same order]
//   u32    crc32 of every preceding byte
struct Checkpoint {
  Model model;
  bool static_mode = false;
  std::optional<AdamState> optimizer;
};

void save_checkpoint(const std::string& path, const Model& model, bool static_mode,
                     const AdamState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace deepred
