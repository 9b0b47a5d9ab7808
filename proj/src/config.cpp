#include "trace/config.hpp"

#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace trace {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw std::invalid_argument("config: key '" + key + "' wants a boolean, got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' wants an integer, got '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' wants an unsigned integer, got '" +
                                value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "' wants a number, got '" + value + "'");
  }
}

std::string fmt_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

void RunConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("RunConfig: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("RunConfig: epochs must be >= 1");
  if (lr_min > lr_init) throw std::invalid_argument("RunConfig: lr_min exceeds lr_init");
  if (lr_init <= 0.0) throw std::invalid_argument("RunConfig: lr_init must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("RunConfig: weight_decay must be >= 0");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("RunConfig: threshold must lie in (0, 1)");
  model_config().validate();
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.encoder.input_size = input_size;
  m.encoder.patch = encoder_patch;
  m.encoder.stages = encoder_stages;
  m.encoder.width = encoder_width;
  m.encoder.seed = encoder_seed;
  m.reasoner.input_size = input_size;
  m.reasoner.patch = reasoner_patch;
  m.reasoner.width = reasoner_width;
  m.reasoner.blocks = reasoner_blocks;
  m.reasoner.state_dim = reasoner_state;
  m.reasoner.conv_kernel = reasoner_conv;
  m.prompt_hidden = prompt_hidden;
  m.decoder_width = decoder_width;
  m.encoder_profile = encoder_profile;
  m.ablation = ablation;
  m.seed = seed;
  return m;
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.input_size = 64;
  c.encoder_patch = 8;
  c.encoder_stages = 2;
  c.encoder_width = 32;
  c.reasoner_patch = 4;
  c.reasoner_width = 32;
  c.reasoner_blocks = 2;
  c.reasoner_state = 8;
  c.prompt_hidden = 12;
  c.decoder_width = 12;
  return c;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "input_size") cfg.input_size = parse_int(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_int(key, value);
  else if (key == "epochs") cfg.epochs = parse_int(key, value);
  else if (key == "lr_init") cfg.lr_init = parse_double(key, value);
  else if (key == "lr_min") cfg.lr_min = parse_double(key, value);
  else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
  else if (key == "threshold") cfg.threshold = parse_double(key, value);
  else if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "encoder_profile") cfg.encoder_profile = value;
  else if (key == "encoder_patch") cfg.encoder_patch = parse_int(key, value);
  else if (key == "encoder_stages") cfg.encoder_stages = parse_int(key, value);
  else if (key == "encoder_width") cfg.encoder_width = parse_int(key, value);
  else if (key == "encoder_seed") cfg.encoder_seed = parse_u64(key, value);
  else if (key == "reasoner_patch") cfg.reasoner_patch = parse_int(key, value);
  else if (key == "reasoner_width") cfg.reasoner_width = parse_int(key, value);
  else if (key == "reasoner_blocks") cfg.reasoner_blocks = parse_int(key, value);
  else if (key == "reasoner_state") cfg.reasoner_state = parse_int(key, value);
  else if (key == "reasoner_conv") cfg.reasoner_conv = parse_int(key, value);
  else if (key == "prompt_hidden") cfg.prompt_hidden = parse_int(key, value);
  else if (key == "decoder_width") cfg.decoder_width = parse_int(key, value);
  else if (key == "sps_wavelet") cfg.ablation.sps_wavelet = parse_bool(key, value);
  else if (key == "sps_srm") cfg.ablation.sps_srm = parse_bool(key, value);
  else if (key == "scr_mask") cfg.ablation.scr_mask = parse_bool(key, value);
  else if (key == "scr_edge") cfg.ablation.scr_edge = parse_bool(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

namespace {

RunConfig parse_config_stream(std::istream& in, const std::string& origin) {
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                  ": expected key = value, got '" + stripped + "'");
    }
    try {
      apply_config_entry(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_run_config: cannot open " + path);
  return parse_config_stream(in, path);
}

RunConfig parse_run_config(const std::string& text) {
  std::istringstream in(text);
  return parse_config_stream(in, "<config>");
}

std::string dump_run_config(const RunConfig& cfg) {
  std::ostringstream s;
  s << "input_size=" << cfg.input_size << '\n'
    << "batch_size=" << cfg.batch_size << '\n'
    << "epochs=" << cfg.epochs << '\n'
    << "lr_init=" << fmt_double(cfg.lr_init) << '\n'
    << "lr_min=" << fmt_double(cfg.lr_min) << '\n'
    << "weight_decay=" << fmt_double(cfg.weight_decay) << '\n'
    << "threshold=" << fmt_double(cfg.threshold) << '\n'
    << "seed=" << cfg.seed << '\n'
    << "encoder_profile=" << cfg.encoder_profile << '\n'
    << "encoder_patch=" << cfg.encoder_patch << '\n'
    << "encoder_stages=" << cfg.encoder_stages << '\n'
    << "encoder_width=" << cfg.encoder_width << '\n'
    << "encoder_seed=" << cfg.encoder_seed << '\n'
    << "reasoner_patch=" << cfg.reasoner_patch << '\n'
    << "reasoner_width=" << cfg.reasoner_width << '\n'
    << "reasoner_blocks=" << cfg.reasoner_blocks << '\n'
    << "reasoner_state=" << cfg.reasoner_state << '\n'
    << "reasoner_conv=" << cfg.reasoner_conv << '\n'
    << "prompt_hidden=" << cfg.prompt_hidden << '\n'
    << "decoder_width=" << cfg.decoder_width << '\n'
    << "sps_wavelet=" << (cfg.ablation.sps_wavelet ? "true" : "false") << '\n'
    << "sps_srm=" << (cfg.ablation.sps_srm ? "true" : "false") << '\n'
    << "scr_mask=" << (cfg.ablation.scr_mask ? "true" : "false") << '\n'
    << "scr_edge=" << (cfg.ablation.scr_edge ? "true" : "false") << '\n';
  return s.str();
}

}  // namespace trace
