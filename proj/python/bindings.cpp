#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "choreo/codebook.hpp"
#include "choreo/errors.hpp"
#include "choreo/harness.hpp"
#include "choreo/skills.hpp"

namespace py = pybind11;
using namespace choreo;

namespace {

Tensor to_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ParseError("expected a non-empty 2-D array");
  Tensor t = Tensor::zeros(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != t.cols()) throw ParseError("ragged 2-D array");
    for (std::size_t j = 0; j < t.cols(); ++j) t(i, j) = rows[i][j];
  }
  return t;
}

std::vector<std::vector<double>> to_rows(const Tensor& t) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < t.rows(); ++i) rows.push_back(t.row_vector(i));
  return rows;
}

RunConfig make_config(const std::map<std::string, std::string>& values, const std::string& file) {
  RunConfig c = file.empty() ? RunConfig{} : load_config_file(file);
  apply_environment(c);
  for (const auto& [k, v] : values) set_config_value(c, k, v);
  c.validate();
  return c;
}

py::dict phase_dict(const PhaseResult& r) {
  py::dict d;
  d["steps"] = r.steps;
  d["updates"] = r.updates;
  d["episodes"] = r.episodes;
  d["complete"] = r.complete;
  d["returns"] = r.returns;
  d["successes"] = std::vector<bool>(r.successes);
  d["armed"] = r.armed;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Choreographer skill-learning agent";
  py::register_exception<StartupError>(m, "StartupError");
  py::register_exception<ParseError>(m, "ParseError");
  py::register_exception<NotReady>(m, "NotReady");
  py::register_exception<NumericFault>(m, "NumericFault");
  py::register_exception<ContractViolation>(m, "ContractViolation");

  m.def("config_keys", [] {
    std::vector<std::string> keys;
    for (const auto& k : config_keys()) keys.push_back(k.name);
    return keys;
  });
  m.def("resolve_config", [](const std::map<std::string, std::string>& values, const std::string& file) {
    const RunConfig c = make_config(values, file);
    std::map<std::string, std::string> out;
    for (const auto& k : config_keys()) out[k.name] = get_config_value(c, k.name);
    return out;
  }, py::arg("values"), py::arg("file") = "");

  m.def("pretrain", [](const std::map<std::string, std::string>& values, const std::string& file, bool resume) {
    const RunConfig c = make_config(values, file);
    py::gil_scoped_release release;
    PhaseResult r = run_pretrain(c, RunControl{resume, 0});
    py::gil_scoped_acquire acquire;
    return phase_dict(r);
  }, py::arg("values"), py::arg("file") = "", py::arg("resume") = false);
  m.def("finetune", [](const std::map<std::string, std::string>& values, const std::string& file, bool resume) {
    const RunConfig c = make_config(values, file);
    py::gil_scoped_release release;
    PhaseResult r = run_finetune(c, RunControl{resume, 0});
    py::gil_scoped_acquire acquire;
    return phase_dict(r);
  }, py::arg("values"), py::arg("file") = "", py::arg("resume") = false);
  m.def("evaluate", [](const std::map<std::string, std::string>& values, const std::string& file) {
    const RunConfig c = make_config(values, file);
    py::gil_scoped_release release;
    return run_eval(c).to_json().dump();
  }, py::arg("values"), py::arg("file") = "");
  m.def("bench_codebook", [](const std::map<std::string, std::string>& values, const std::string& file) {
    const RunConfig c = make_config(values, file);
    py::gil_scoped_release release;
    return run_bench_codebook(c).dump();
  }, py::arg("values"), py::arg("file") = "");
  m.def("export_skills", [](const std::map<std::string, std::string>& values, const std::string& file,
                            const std::string& output) { return export_skills(make_config(values, file), output).dump(); },
        py::arg("values"), py::arg("file") = "", py::arg("output") = "");
  m.def("generate_dataset", [](const std::map<std::string, std::string>& values, std::size_t episodes,
                               const std::string& path) { generate_dataset(make_config(values, ""), episodes, path); },
        py::arg("values"), py::arg("episodes"), py::arg("path"));

  m.def("quantize", [](const std::vector<std::vector<double>>& codes, const std::vector<double>& embedding) {
    return Codebook(to_tensor(codes)).quantize(embedding);
  }, py::arg("codes"), py::arg("embedding"));
  m.def("resample_weights", [](const std::vector<std::vector<double>>& codes,
                               const std::vector<std::vector<double>>& embeddings) {
    return Codebook(to_tensor(codes)).resample_weights(to_tensor(embeddings));
  }, py::arg("codes"), py::arg("embeddings"));
  m.def("knn_entropy_reward", [](const std::vector<std::vector<double>>& states, std::size_t k) {
    return knn_entropy_reward(to_tensor(states), k);
  }, py::arg("states"), py::arg("k"));
  m.def("kl_categorical", [](const std::vector<double>& q, const std::vector<double>& p, std::size_t classes) {
    return kl_categorical(q, p, classes);
  }, py::arg("q_logits"), py::arg("p_logits"), py::arg("classes"));
  m.def("lambda_returns", [](const std::vector<std::vector<double>>& rewards,
                             const std::vector<std::vector<double>>& values, double gamma, double lambda) {
    std::vector<Tensor> r, v;
    for (const auto& x : rewards) r.push_back(Tensor::matrix(x.size(), 1, x));
    for (const auto& x : values) v.push_back(Tensor::matrix(x.size(), 1, x));
    std::vector<std::vector<double>> out;
    for (const auto& g : lambda_returns(r, v, gamma, lambda)) out.push_back(g.values());
    return out;
  }, py::arg("rewards"), py::arg("values"), py::arg("gamma"), py::arg("lambda_"));

  py::class_<PointMassEnv>(m, "PointMassEnv")
      .def(py::init([](std::array<double, 2> goal, double goal_radius, int max_steps, bool sparse, bool two_rooms) {
             PointMassConfig c;
             c.goal = goal;
             c.goal_radius = goal_radius;
             c.max_steps = max_steps;
             c.sparse = sparse;
             c.two_rooms = two_rooms;
             return PointMassEnv(c);
           }),
           py::arg("goal") = std::array<double, 2>{0.5, 0.5}, py::arg("goal_radius") = 0.1,
           py::arg("max_steps") = 200, py::arg("sparse") = true, py::arg("two_rooms") = false)
      .def("reset", py::overload_cast<>(&PointMassEnv::reset))
      .def("step", [](PointMassEnv& env, const std::vector<double>& action) {
        StepResult r = env.step(action);
        return py::make_tuple(r.obs, r.reward, r.done);
      })
      .def_property_readonly("position", &PointMassEnv::position)
      .def_property_readonly("velocity", &PointMassEnv::velocity)
      .def_property_readonly("steps", &PointMassEnv::steps)
      .def_property_readonly("done", &PointMassEnv::done)
      .def_property_readonly("clipped_actions", &PointMassEnv::clipped_actions);
}
