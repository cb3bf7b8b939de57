// Finite-difference drivers for every block and for the full 16x16 two-task
// network, shared by the command line tool and the acceptance harness. Each
// driver builds its module in 64-bit mode, runs one backward sweep, and
// returns the worst relative error against a central-difference oracle.
//
// Key/squeeze biases are excluded from the relative checks: they shift every
// logit of a softmax row together, so their true gradient is exactly zero
// and a relative error there is meaningless (the unit suites pin those
// gradients to zero absolutely).
//
// With inject_fault set, the scalar loss is routed through a unary op whose
// claimed derivative is wrong by 2x, so a correct checker must report a
// failure — a self-test of the verification harness.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bridgenet {

double verify_tpp(uint64_t seed, bool inject_fault = false);
double verify_bfe(uint64_t seed, bool inject_fault = false);
double verify_tfr(uint64_t seed, bool inject_fault = false);
double verify_hdc(uint64_t seed, bool inject_fault = false);
double verify_ffn(uint64_t seed, bool inject_fault = false);
double verify_model(uint64_t seed, bool inject_fault = false);

// every driver with its block name, in report order
using VerifyFn = double (*)(uint64_t, bool);
const std::vector<std::pair<std::string, VerifyFn>>& verify_blocks();

}  // namespace bridgenet
