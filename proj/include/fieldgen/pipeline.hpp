#pragma once

#include <string>
#include <vector>

#include "fieldgen/config.hpp"
#include "fieldgen/moltypes.hpp"

namespace fieldgen {

// Canonical identity of a molecule for uniqueness counting: atoms sorted by
// (element, coordinates rounded to 0.1 A), serialized to a stable string.
std::string molecule_key(const Molecule& m);

// Deterministic standalone SVG plots; identical input gives identical bytes.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values);
std::string svg_line_chart(const std::string& title, const std::vector<double>& xs,
                           const std::vector<double>& ys);

// Complexes of every *.cplx.txt under dir, sorted by filename.
std::vector<Complex> load_dataset(const std::string& dir);

// Each command writes its outputs plus the resolved configuration into
// out_dir, creating it if needed. Errors surface as ConfigError/IoError
// (bad setup) or NumericalError (diverged runs).
void cmd_gen_data(RunConfig rc, const std::string& out_dir);
void cmd_train_ae(RunConfig rc, const std::string& out_dir);
void cmd_train_denoiser(RunConfig rc, const std::string& out_dir);
void cmd_sample(RunConfig rc, const std::string& out_dir);
void cmd_recover(RunConfig rc, const std::string& out_dir);
void cmd_eval(RunConfig rc, const std::string& out_dir);

}  // namespace fieldgen
