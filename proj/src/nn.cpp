#include "gas/nn.hpp"

#include <fstream>
#include <sstream>

#include "gas/config.hpp"

namespace gas::nn {

void NetworkSpec::validate() const {
  const auto fail = [](const std::string& what) { throw ContractViolation("NetworkSpec: " + what); };
  if (n_layers < 1 || n_heads < 1 || hidden < 1 || context_tokens < 1 || ffn_mult < 1 || max_timestep < 1 ||
      output_dim < 1)
    fail("all dimensions must be >= 1");
  if (hidden % n_heads != 0) fail("hidden must be divisible by n_heads");
  if (inputs.empty()) fail("at least one input modality is required");
  for (const auto& [name, dim] : inputs)
    if (dim < 1) fail("input '" + name + "' must have dim >= 1");
  if (activation != "relu") fail("unsupported activation '" + activation + "'");
}

nlohmann::ordered_json NetworkSpec::to_json() const {
  nlohmann::ordered_json j;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["hidden"] = hidden;
  j["context_tokens"] = context_tokens;
  j["ffn_mult"] = ffn_mult;
  j["max_timestep"] = max_timestep;
  nlohmann::ordered_json in = nlohmann::ordered_json::array();
  for (const auto& [name, dim] : inputs) in.push_back({name, dim});
  j["inputs"] = in;
  j["output_dim"] = output_dim;
  j["activation"] = activation;
  j["history_free"] = history_free;
  return j;
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j, bool check) {
  NetworkSpec s;
  s.n_layers = j.at("n_layers").get<int>();
  s.n_heads = j.at("n_heads").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.context_tokens = j.at("context_tokens").get<int>();
  s.ffn_mult = j.at("ffn_mult").get<int>();
  s.max_timestep = j.at("max_timestep").get<int>();
  s.inputs.clear();
  for (const auto& e : j.at("inputs")) s.inputs.emplace_back(e.at(0).get<std::string>(), e.at(1).get<int>());
  s.output_dim = j.at("output_dim").get<int>();
  s.activation = j.at("activation").get<std::string>();
  s.history_free = j.at("history_free").get<bool>();
  if (check) s.validate();
  return s;
}

const ParameterSet<double>& Checkpoint::group(const std::string& name) const {
  for (const auto& [n, p] : groups)
    if (n == name) return p;
  throw DatasetError("checkpoint has no parameter group '" + name + "'");
}

// Layout:
//   gas-checkpoint v1
//   <header json, one line>
//   tensor <group>/<name> <rows> <cols>
//   <rows*cols shortest round-trip decimals, column-major, space separated>
//   ...
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write checkpoint " + path.string());
  out << "gas-checkpoint v1\n" << ckpt.header.dump() << '\n';
  for (const auto& [group, params] : ckpt.groups) {
    for (std::size_t i = 0; i < params.tensors().size(); ++i) {
      const auto& t = params.tensors()[i];
      out << "tensor " << group << '/' << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
      const auto seg = params.values().segment(t.offset, static_cast<Eigen::Index>(t.rows) * t.cols);
      for (Eigen::Index k = 0; k < seg.size(); ++k) {
        if (k) out << ' ';
        out << format_double(seg[k]);
      }
      out << '\n';
    }
  }
  if (!out) throw DatasetError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "gas-checkpoint v1")
    throw DatasetError(path.string() + ": not a gas checkpoint");
  Checkpoint ckpt;
  if (!std::getline(in, line)) throw DatasetError(path.string() + ": missing header");
  try {
    ckpt.header = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(path.string() + ": bad header: " + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::string tag, full;
    int rows = 0, cols = 0;
    if (!(hs >> tag >> full >> rows >> cols) || tag != "tensor")
      throw DatasetError(path.string() + ": malformed tensor header '" + line + "'");
    const auto slash = full.find('/');
    if (slash == std::string::npos) throw DatasetError(path.string() + ": tensor name lacks group");
    const std::string group = full.substr(0, slash), name = full.substr(slash + 1);
    if (ckpt.groups.empty() || ckpt.groups.back().first != group) ckpt.groups.emplace_back(group, ParameterSet<double>());
    auto& params = ckpt.groups.back().second;
    const int idx = params.add(name, rows, cols);
    std::string values;
    if (!std::getline(in, values)) throw DatasetError(path.string() + ": truncated tensor " + full);
    auto t = params.tensor(idx);
    std::size_t pos = 0;
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      const auto end = values.find(' ', pos);
      const auto token = std::string_view(values).substr(pos, end == std::string::npos ? std::string::npos : end - pos);
      try {
        t.data()[k] = parse_double(token);
      } catch (const ConfigError&) {
        throw DatasetError(path.string() + ": bad value in tensor " + full);
      }
      if (end == std::string::npos && k + 1 < t.size())
        throw DatasetError(path.string() + ": tensor " + full + " has too few values");
      pos = end + 1;
    }
  }
  return ckpt;
}

std::uint64_t parameter_hash(const ParameterSet<double>& params) {
  return fnv1a(params.values().data(), static_cast<std::size_t>(params.size()) * sizeof(double));
}

GradCheckResult check_gradients(SequenceModel<double>& model, const SequenceInput<double>& input,
                                const Matrix<double>& weights, double eps, int per_tensor, std::uint64_t seed) {
  using Model = SequenceModel<double>;
  typename Model::Cache cache;
  model.forward(input, &cache);
  auto grads = model.params().zeros_like();
  model.backward(cache, weights, grads);

  GradCheckResult result;
  Rng rng(seed);
  auto& values = model.params().values();
  for (const auto& t : model.params().tensors()) {
    const Eigen::Index n = static_cast<Eigen::Index>(t.rows) * t.cols;
    const int samples = static_cast<int>(std::min<Eigen::Index>(n, per_tensor));
    for (int s = 0; s < samples; ++s) {
      const Eigen::Index idx = t.offset + (samples == n ? s : static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
      const double saved = values[idx];
      typename Model::Cache cp, cm;
      values[idx] = saved + eps;
      const double lp = (model.forward(input, &cp).array() * weights.array()).sum();
      values[idx] = saved - eps;
      const double lm = (model.forward(input, &cm).array() * weights.array()).sum();
      values[idx] = saved;
      if (Model::activation_pattern(cp) != Model::activation_pattern(cm)) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * eps);
      const double analytic = grads.values()[idx];
      const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace gas::nn
