#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hgn/error.hpp"
#include "hgn/eval.hpp"
#include "hgn/gradcheck.hpp"
#include "hgn/io.hpp"
#include "hgn/synthetic.hpp"
#include "hgn/training.hpp"

namespace py = pybind11;
using namespace hgn;

PYBIND11_MODULE(_hgn, m) {
  m.doc() = "Hierarchical gating network for sequential recommendation";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<EmptyDatasetError>(m, "EmptyDatasetError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<SamplingError>(m, "SamplingError", base.ptr());
  py::register_exception<ReportError>(m, "ReportError", base.ptr());

  // ---- data

  py::class_<RawRating>(m, "RawRating")
      .def(py::init<std::string, std::string, double, std::int64_t>(), py::arg("user"), py::arg("item"),
           py::arg("rating"), py::arg("timestamp"))
      .def_readwrite("user", &RawRating::user)
      .def_readwrite("item", &RawRating::item)
      .def_readwrite("rating", &RawRating::rating)
      .def_readwrite("timestamp", &RawRating::timestamp);

  py::class_<IdMap>(m, "IdMap")
      .def("find", &IdMap::find)
      .def("external", &IdMap::external)
      .def("__len__", [](const IdMap& ids) { return ids.keys().size(); })
      .def("keys", [](const IdMap& ids) { return std::vector<std::string>(ids.keys().begin(), ids.keys().end()); });

  py::class_<InteractionLog>(m, "InteractionLog")
      .def_readonly("num_users", &InteractionLog::num_users)
      .def_readonly("num_items", &InteractionLog::num_items)
      .def_readonly("sequences", &InteractionLog::sequences)
      .def_readonly("users", &InteractionLog::users)
      .def_readonly("items", &InteractionLog::items)
      .def_property_readonly("num_interactions", &InteractionLog::num_interactions)
      .def_property_readonly("density", &InteractionLog::density);

  py::class_<SplitLog>(m, "SplitLog")
      .def_readonly("num_users", &SplitLog::num_users)
      .def_readonly("num_items", &SplitLog::num_items)
      .def_readonly("train", &SplitLog::train)
      .def_readonly("validation", &SplitLog::validation)
      .def_readonly("test", &SplitLog::test)
      .def_readonly("users", &SplitLog::users)
      .def_readonly("items", &SplitLog::items)
      .def("__eq__", [](const SplitLog& a, const SplitLog& b) { return a == b; });

  py::class_<TrainingInstance>(m, "TrainingInstance")
      .def(py::init<UserId, Sequence, Sequence>(), py::arg("user"), py::arg("context"), py::arg("targets"))
      .def_readwrite("user", &TrainingInstance::user)
      .def_readwrite("context", &TrainingInstance::context)
      .def_readwrite("targets", &TrainingInstance::targets);

  m.def(
      "read_ratings",
      [](const std::filesystem::path& path, const std::string& format) {
        return read_ratings(path, parse_input_format(format));
      },
      py::arg("path"), py::arg("format") = "csv");
  m.def(
      "build_interactions",
      [](const std::vector<RawRating>& rows, double min_rating, std::size_t min_item_users,
         std::size_t min_user_interactions, const std::string& mode) {
        return build_interactions(rows, {min_rating, min_item_users, min_user_interactions,
                                         parse_filter_mode(mode)});
      },
      py::arg("rows"), py::arg("min_rating") = 4.0, py::arg("min_item_users") = 5,
      py::arg("min_user_interactions") = 10, py::arg("mode") = "single");
  m.def("chronological_split", &chronological_split, py::arg("log"));
  m.def(
      "split_sizes",
      [](std::size_t n) {
        const auto s = split_sizes(n);
        return py::make_tuple(s.train, s.validation, s.test);
      },
      py::arg("n"));
  m.def(
      "generate_instances",
      [](UserId user, const Sequence& train, std::size_t L, std::size_t T) {
        return generate_instances(user, train, L, T);
      },
      py::arg("user"), py::arg("train"), py::arg("context_len"), py::arg("horizon"));
  m.def(
      "generate_ratings",
      [](std::size_t users, std::size_t items, std::size_t min_len, std::size_t max_len, std::size_t topics,
         double follow_prob, bool sequential, std::uint64_t seed) {
        SyntheticConfig c;
        c.users = users;
        c.items = items;
        c.min_len = min_len;
        c.max_len = max_len;
        c.topics = topics;
        c.follow_prob = follow_prob;
        c.sequential = sequential;
        c.seed = seed;
        return generate_ratings(c);
      },
      py::arg("users") = 943, py::arg("items") = 1682, py::arg("min_len") = 20, py::arg("max_len") = 180,
      py::arg("topics") = 10, py::arg("follow_prob") = 0.8, py::arg("sequential") = true,
      py::arg("seed") = 42);
  m.def("save_bundle", &save_bundle, py::arg("path"), py::arg("split"));
  m.def("load_bundle", &load_bundle, py::arg("path"));

  // ---- model

  py::class_<Variant>(m, "Variant")
      .def(py::init([](const std::string& tag) { return Variant::parse(tag); }), py::arg("tag") = "HGN")
      .def_readwrite("feature_gate", &Variant::feature_gate)
      .def_readwrite("instance_gate", &Variant::instance_gate)
      .def_readwrite("item_item", &Variant::item_item)
      .def_property(
          "pooling", [](const Variant& v) { return std::string(to_string(v.pooling)); },
          [](Variant& v, const std::string& p) { v.pooling = parse_pooling(p); })
      .def_property_readonly("tag", &Variant::tag)
      .def("__repr__", [](const Variant& v) { return "Variant('" + v.tag() + "')"; });
  m.def("ablation_variants", &ablation_variants);

  py::class_<ModelParams>(m, "ModelParams")
      .def_static(
          "random",
          [](std::size_t d, std::size_t L, std::size_t M, std::size_t N, std::uint64_t seed) {
            return ModelParams::random({d, L, M, N}, seed);
          },
          py::arg("dim"), py::arg("context_len"), py::arg("num_users"), py::arg("num_items"), py::arg("seed"))
      .def_static(
          "zeros",
          [](std::size_t d, std::size_t L, std::size_t M, std::size_t N) { return ModelParams::zeros({d, L, M, N}); },
          py::arg("dim"), py::arg("context_len"), py::arg("num_users"), py::arg("num_items"))
      .def_readwrite("user_emb", &ModelParams::user_emb)
      .def_readwrite("item_in", &ModelParams::item_in)
      .def_readwrite("item_out", &ModelParams::item_out)
      .def_readwrite("gate_item", &ModelParams::gate_item)
      .def_readwrite("gate_user", &ModelParams::gate_user)
      .def_readwrite("gate_bias", &ModelParams::gate_bias)
      .def_readwrite("inst_item", &ModelParams::inst_item)
      .def_readwrite("inst_user", &ModelParams::inst_user)
      .def_property_readonly("dims",
                             [](const ModelParams& p) {
                               const auto d = p.dims();
                               return py::make_tuple(d.dim, d.context_len, d.num_users, d.num_items);
                             })
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def(
      "predict",
      [](const ModelParams& p, UserId user, const Sequence& context, const Variant& v) {
        return forward(p, user, context, v).scores;
      },
      py::arg("params"), py::arg("user"), py::arg("context"), py::arg("variant") = Variant::hgn(),
      "Scores of every item for one user and context window.");
  m.def(
      "parameter_count",
      [](std::size_t d, std::size_t L, std::size_t M, std::size_t N, const Variant& v) {
        const auto c = parameter_count(d, L, M, N, v);
        py::dict out;
        out["W_g1"] = c.gate_item;
        out["W_g2"] = c.gate_user;
        out["b_g"] = c.gate_bias;
        out["w_g3"] = c.inst_item;
        out["W_g4"] = c.inst_user;
        out["U"] = c.user_emb;
        out["E"] = c.item_in;
        out["Q"] = c.item_out;
        out["gating"] = c.gating();
        out["total"] = c.total();
        return out;
      },
      py::arg("dim") = 50, py::arg("context_len") = 5, py::arg("num_users") = 0, py::arg("num_items") = 0,
      py::arg("variant") = Variant::hgn());

  // ---- training

  m.def("bpr_pair_loss", &bpr_pair_loss, py::arg("score_pos"), py::arg("score_neg"));
  m.def(
      "instance_loss",
      [](const ModelParams& p, const TrainingInstance& inst, const std::vector<ItemId>& negs, double lambda,
         const Variant& v) {
        const auto r = instance_loss(p, inst, negs, lambda, v);
        const auto n = static_cast<Eigen::Index>(p.item_out.cols());
        py::dict g;
        g["U"] = r.grad.user_emb.to_dense(p.user_emb.cols());
        g["E"] = r.grad.item_in.to_dense(n);
        g["Q"] = r.grad.item_out.to_dense(n);
        g["W_g1"] = r.grad.gate_item;
        g["W_g2"] = r.grad.gate_user;
        g["b_g"] = r.grad.gate_bias;
        g["w_g3"] = r.grad.inst_item;
        g["W_g4"] = r.grad.inst_user;
        return py::make_tuple(r.loss, g);
      },
      py::arg("params"), py::arg("instance"), py::arg("negatives"), py::arg("lambda_") = 1e-3,
      py::arg("variant") = Variant::hgn(), "Loss and dense gradients for one training instance.");

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("dim", &TrainConfig::dim)
      .def_readwrite("context_len", &TrainConfig::context_len)
      .def_readwrite("horizon", &TrainConfig::horizon)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("lambda_", &TrainConfig::lambda)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("variant", &TrainConfig::variant)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("workers", &TrainConfig::workers);

  py::class_<EpochStats>(m, "EpochStats")
      .def_readonly("epoch", &EpochStats::epoch)
      .def_readonly("instances", &EpochStats::instances)
      .def_readonly("mean_loss", &EpochStats::mean_loss)
      .def_readonly("wall_seconds", &EpochStats::wall_seconds)
      .def_readonly("sampling_seconds", &EpochStats::sampling_seconds)
      .def("log_line", &EpochStats::log_line);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("params", &TrainResult::params)
      .def_readonly("epochs", &TrainResult::epochs);

  m.def(
      "train",
      [](const SplitLog& split, const TrainConfig& config, const EpochCallback& on_epoch) {
        py::gil_scoped_release release;
        EpochCallback cb;
        if (on_epoch) {
          cb = [&](const EpochStats& s, const ModelParams& p) {
            py::gil_scoped_acquire acquire;
            on_epoch(s, p);
          };
        }
        return train(split, config, cb);
      },
      py::arg("split"), py::arg("config") = TrainConfig{}, py::arg("on_epoch") = nullptr);

  // ---- evaluation

  py::class_<MetricReport>(m, "MetricReport")
      .def_readonly("ks", &MetricReport::ks)
      .def_readonly("recall", &MetricReport::recall)
      .def_readonly("ndcg", &MetricReport::ndcg)
      .def_readonly("users_evaluated", &MetricReport::users_evaluated)
      .def_readonly("users_skipped_short", &MetricReport::users_skipped_short)
      .def_readonly("users_skipped_empty", &MetricReport::users_skipped_empty)
      .def("recall_at", &MetricReport::recall_at)
      .def("ndcg_at", &MetricReport::ndcg_at)
      .def("to_json", &MetricReport::to_json)
      .def_static("from_json", &MetricReport::from_json)
      .def("__str__", &MetricReport::to_table);

  m.def(
      "evaluate",
      [](const ModelParams& p, const SplitLog& split, const Variant& v, std::vector<std::size_t> ks,
         const std::string& target, std::size_t workers) {
        EvalConfig c;
        c.context_len = p.dims().context_len;
        c.variant = v;
        c.ks = std::move(ks);
        if (target == "validation") c.target = HeldOut::Validation;
        else if (target != "test") throw ContractError("target must be 'test' or 'validation'");
        c.workers = workers;
        py::gil_scoped_release release;
        return evaluate(p, split, c);
      },
      py::arg("params"), py::arg("split"), py::arg("variant") = Variant::hgn(), py::arg("ks") = default_ks(),
      py::arg("target") = "test", py::arg("workers") = 1);
  m.def(
      "rank_items",
      [](const std::vector<double>& scores, std::vector<ItemId> exclusion, std::size_t k) {
        std::sort(exclusion.begin(), exclusion.end());
        exclusion.erase(std::unique(exclusion.begin(), exclusion.end()), exclusion.end());
        return rank_items(scores, exclusion, k);
      },
      py::arg("scores"), py::arg("exclusion"), py::arg("k"));
  m.def(
      "recall_at_k",
      [](const std::vector<ItemId>& r, const std::vector<ItemId>& h, std::size_t k) { return recall_at_k(r, h, k); },
      py::arg("ranked"), py::arg("heldout"), py::arg("k"));
  m.def(
      "ndcg_at_k",
      [](const std::vector<ItemId>& r, const std::vector<ItemId>& h, std::size_t k) { return ndcg_at_k(r, h, k); },
      py::arg("ranked"), py::arg("heldout"), py::arg("k"));

  // ---- checkpoints and gradient checks

  m.def(
      "save_checkpoint",
      [](const std::filesystem::path& path, const ModelParams& p, const Variant& v, std::uint64_t epochs) {
        save_checkpoint(path, {p, v, epochs});
      },
      py::arg("path"), py::arg("params"), py::arg("variant") = Variant::hgn(), py::arg("epochs") = 0);
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path) {
        auto c = load_checkpoint(path);
        return py::make_tuple(c.params, c.variant, c.epochs);
      },
      py::arg("path"));

  m.def(
      "check_gradients",
      [](const Variant& v, std::size_t d, std::size_t L, std::size_t N, std::uint64_t seed) {
        GradCheckOptions o;
        o.dim = d;
        o.context_len = L;
        o.num_items = N;
        o.seed = seed;
        const auto r = check_gradients(o, v);
        py::dict worst;
        for (const auto& t : r.tensors) worst[py::str(t.tensor)] = t.max_rel_error;
        return py::make_tuple(r.pass, worst);
      },
      py::arg("variant") = Variant::hgn(), py::arg("dim") = 4, py::arg("context_len") = 3,
      py::arg("num_items") = 10, py::arg("seed") = 7,
      "Returns (passed, {tensor: max relative error}).");
}
