#include <fstream>

#include <nlohmann/json.hpp>

#include "ckd/common.hpp"
#include "ckd/history.hpp"

namespace ckd {

using nlohmann::json;

std::string history_line_json(const StepMetrics& m) {
  json j;
  j["step"] = m.step;
  j["bleu"] = m.bleu;
  j["delta_bleu"] = m.delta_bleu;
  j["ad"] = m.ad;
  j["pos"] = m.pos;
  j["neg"] = m.neg;
  j["losses"] = {{"ce", m.losses.ce}, {"kf", m.losses.kf}, {"ki", m.losses.ki}};
  return j.dump();
}

void append_history_line(const std::filesystem::path& path, const StepMetrics& m) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << history_line_json(m) << '\n';
  out.flush();
  if (!out) throw DataError("write failed: " + path.string());
}

RunHistory load_history(const std::filesystem::path& path, std::string method,
                        std::string config_label) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  RunHistory h;
  h.method = std::move(method);
  h.config_label = std::move(config_label);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      StepMetrics m;
      m.step = j.at("step").get<int>();
      m.bleu = j.at("bleu").get<double>();
      m.delta_bleu = j.at("delta_bleu").get<double>();
      m.ad = j.at("ad").get<double>();
      m.pos = j.at("pos").get<long>();
      m.neg = j.at("neg").get<long>();
      const json& l = j.at("losses");
      m.losses.ce = l.at("ce").get<double>();
      m.losses.kf = l.at("kf").get<double>();
      m.losses.ki = l.at("ki").get<double>();
      h.steps.push_back(m);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": missing history field: " + e.what());
    }
  }
  if (h.steps.empty()) throw DataError("empty history: " + path.string());
  for (std::size_t i = 0; i < h.steps.size(); ++i)
    if (h.steps[i].step != static_cast<int>(i))
      throw DataError("non-contiguous step indices in " + path.string());
  return h;
}

}  // namespace ckd
