#include "wordflow/activation_dump.hpp"
#include "wordflow/adapter_rpc.hpp"
#include "wordflow/error.hpp"
#include "wordflow/service.hpp"
#include "wordflow/store.hpp"
#include "wordflow/toy_models.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>
#include <unistd.h>

namespace wf = wordflow;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitStore = 4;

/// Carries the exit status chosen where the failure was classified.
struct Exit {
  int code;
  std::string message;
};

[[noreturn]] void fail(int code, const std::string& message) { throw Exit{code, message}; }

struct ModelOptions {
  std::string spec;
  std::size_t dim = 8;
  std::size_t layers = 4;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  std::string save_spec;
};

struct LoadedModel {
  std::unique_ptr<wf::ModelAdapter> adapter;
  std::string id;
};

std::vector<std::string> dataset_vocabulary(const std::vector<wf::DatasetRecord>& data) {
  std::set<std::string> words;
  for (const auto& r : data)
    for (auto& w : wf::split_words(r.text)) words.insert(std::move(w));
  return {words.begin(), words.end()};
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(kExitData, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return wf::sha256_hex(bytes).substr(0, 16);
}

/// toy-bow | toy-attn [:SPEC.json] | rpc:ENDPOINT | dump:PATH
LoadedModel load_model(const ModelOptions& opt, const std::vector<wf::DatasetRecord>* data) {
  const std::string& spec = opt.spec;
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  LoadedModel out;
  if (kind == "toy-bow" || kind == "toy-attn") {
    const auto variant = kind == "toy-bow" ? wf::ToyVariant::BagOfEmbeddings : wf::ToyVariant::Attention;
    wf::ToyModelSpec weights;
    if (!arg.empty()) {
      weights = wf::load_toy_spec(arg);
      if (weights.variant != variant) fail(kExitUsage, "model file '" + arg + "' is not a " + kind + " model");
    } else {
      if (data == nullptr) fail(kExitUsage, "a random toy model needs --dataset for its vocabulary");
      std::size_t classes = opt.classes;
      if (classes == 0) {
        for (const auto& r : *data) classes = std::max(classes, r.label + 1);
        classes = std::max<std::size_t>(classes, 2);
      }
      weights = wf::ToyModelSpec::random(variant, dataset_vocabulary(*data), opt.dim, classes, opt.layers, opt.seed);
    }
    if (!opt.save_spec.empty()) wf::save_toy_spec(weights, opt.save_spec);
    out.id = kind + ":" + wf::sha256_hex(json(weights).dump()).substr(0, 16);
    out.adapter = wf::make_toy_model(std::move(weights));
  } else if (kind == "rpc") {
    if (arg.empty()) fail(kExitUsage, "rpc: needs an endpoint");
    out.adapter = wf::rpc::RpcAdapter::connect(arg, {.pool_size = std::max(1u, std::thread::hardware_concurrency())});
    out.id = "rpc:" + arg;
  } else if (kind == "dump") {
    if (arg.empty()) fail(kExitUsage, "dump: needs a path");
    out.adapter = std::make_unique<wf::DumpAdapter>(wf::load_activation_dump(arg));
    out.id = "dump:" + file_digest(arg);
  } else {
    fail(kExitUsage, "unknown model '" + spec + "' (expected toy-bow, toy-attn, rpc:ENDPOINT or dump:PATH)");
  }
  return out;
}

wf::ClassPair parse_classes(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) fail(kExitUsage, "--classes must be P,Q");
  try {
    std::size_t used = 0;
    const std::string p = s.substr(0, comma), q = s.substr(comma + 1);
    wf::ClassPair pair{std::stoul(p, &used), 0};
    if (used != p.size()) throw std::invalid_argument(p);
    pair.q = std::stoul(q, &used);
    if (used != q.size()) throw std::invalid_argument(q);
    return pair;
  } catch (const std::logic_error&) {
    fail(kExitUsage, "--classes must be two class ids, e.g. 0,1");
  }
}

std::shared_ptr<const wf::MeasureStore> open_store(const std::string& dir) {
  try {
    return wf::MeasureStore::open(dir);
  } catch (const wf::Error& e) {
    fail(kExitStore, e.what());
  }
}

std::atomic<wf::HttpServer*> g_server{nullptr};
std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) {
  g_stop = true;
  if (auto* s = g_server.load()) s->stop();
}

// ---------------------------------------------------------------- commands

struct PrecomputeArgs {
  ModelOptions model;
  std::string dataset;
  std::string classes;
  std::string config;
  std::string out;
  bool resume = false;
  std::size_t workers = 0;
  bool quiet = false;
};

int cmd_precompute(const PrecomputeArgs& a) {
  std::vector<wf::DatasetRecord> data;
  wf::PipelineConfig config;
  try {
    data = wf::load_dataset(a.dataset);
    if (!a.config.empty()) config = wf::load_pipeline_config(a.config);
  } catch (const wf::Error& e) {
    fail(kExitData, e.what());
  }
  if (a.workers) config.workers = a.workers;
  const wf::ClassPair pair = parse_classes(a.classes);

  LoadedModel model;
  try {
    model = load_model(a.model, &data);
  } catch (const wf::Error& e) {
    fail(kExitData, std::string("model: ") + e.what());
  }

  wf::PrecomputeOptions options;
  options.resume = a.resume;
  if (!a.quiet) {
    options.progress = [](std::size_t done, std::size_t total) {
      if (done == total || done % 25 == 0) std::fprintf(stderr, "\r%zu/%zu samples", done, total);
      if (done == total) std::fputc('\n', stderr);
    };
  }
  wf::PrecomputeResult result;
  try {
    result = wf::precompute_corpus(*model.adapter, model.id, data, pair, config, a.out, options);
  } catch (const std::filesystem::filesystem_error& e) {
    fail(kExitStore, e.what());
  } catch (const wf::CorruptStore& e) {
    fail(kExitStore, e.what());
  } catch (const wf::Error& e) {
    fail(kExitData, e.what());
  }
  const auto& m = result.manifest;
  std::printf("store %s: %zu samples (%zu computed, %zu reused), hash %s\n", a.out.c_str(), m.blocks.size(),
              result.computed, result.reused, m.content_hash.c_str());
  if (!m.complete) {
    for (const auto& f : m.failures) std::fprintf(stderr, "failed: %s\n", f.c_str());
    fail(kExitData, "store is incomplete: " + std::to_string(m.failures.size()) + " sample(s) failed");
  }
  return kExitOk;
}

int cmd_serve(const std::string& store_dir, const std::string& host, int port) {
  auto store = open_store(store_dir);
  if (!store->complete()) std::fprintf(stderr, "warning: store is incomplete; corpus queries answer 409\n");
  wf::HttpServer server(store);
  int bound = 0;
  try {
    bound = server.bind(host, port);
  } catch (const wf::Error& e) {
    fail(kExitUsage, e.what());
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("serving %s on http://%s:%d/api/v1/\n", store_dir.c_str(), host.c_str(), bound);
  std::fflush(stdout);
  server.run();
  g_server = nullptr;
  return kExitOk;
}

int cmd_export_flow(const std::string& store_dir, const std::string& id, const std::string& svg,
                    const std::string& json_path) {
  auto store = open_store(store_dir);
  wf::QueryEngine engine(store);
  json flow;
  try {
    flow = engine.sample_flow(id);
  } catch (const wf::ApiError& e) {
    fail(kExitData, e.what());
  } catch (const wf::CorruptStore& e) {
    fail(kExitStore, e.what());
  }
  auto write = [](const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) fail(kExitData, "cannot write '" + path + "'");
  };
  if (!svg.empty()) write(svg, wf::render_flow_svg(flow));
  if (!json_path.empty()) write(json_path, flow.dump(2) + "\n");
  if (svg.empty() && json_path.empty()) std::cout << wf::render_flow_svg(flow);
  return kExitOk;
}

int cmd_inspect(const std::string& store_dir, bool verify, bool as_json) {
  auto store = open_store(store_dir);
  const auto& m = store->manifest();
  std::size_t bad = 0;
  if (verify) {
    for (const auto& id : store->sample_ids()) {
      try {
        store->sample(id);
      } catch (const wf::Error& e) {
        ++bad;
        std::fprintf(stderr, "corrupt: %s\n", e.what());
      }
    }
  }
  if (as_json) {
    json j = m;
    if (verify) j["corrupt_blocks"] = bad;
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("format version   %u\n", m.format_version);
    std::printf("model            %s\n", m.model_id.c_str());
    std::printf("dataset hash     %s\n", m.dataset_hash.c_str());
    std::printf("content hash     %s\n", m.content_hash.c_str());
    std::printf("class pair       %zu,%zu of %zu classes\n", m.pair.p, m.pair.q, m.class_count);
    std::printf("layers           %zu\n", m.layer_count);
    std::printf("dataset size     %zu\n", m.dataset_size);
    std::printf("sample blocks    %zu\n", m.blocks.size());
    std::printf("complete         %s\n", store->complete() ? "yes" : "no");
    if (const auto* c = store->corpus()) {
      std::printf("sigma_s          %.6g\n", c->sigma_s);
      std::printf("accuracy         %.4f\n", c->confusion.accuracy());
      std::printf("word contexts    %zu\n", c->word_contexts.size());
    }
    for (const auto& f : m.failures) std::printf("failure          %s\n", f.c_str());
    if (verify) std::printf("corrupt blocks   %zu\n", bad);
  }
  if (bad) return kExitStore;
  return kExitOk;
}

int cmd_serve_model(const ModelOptions& opt, const std::string& dataset, const std::string& host, int port,
                    bool stdio) {
  std::vector<wf::DatasetRecord> data;
  if (!dataset.empty()) {
    try {
      data = wf::load_dataset(dataset);
    } catch (const wf::Error& e) {
      fail(kExitData, e.what());
    }
  }
  LoadedModel model;
  try {
    model = load_model(opt, dataset.empty() ? nullptr : &data);
  } catch (const wf::Error& e) {
    fail(kExitData, std::string("model: ") + e.what());
  }
  if (stdio) {
    wf::rpc::Stream stream(STDIN_FILENO, STDOUT_FILENO, false);
    wf::rpc::serve_stream(*model.adapter, stream);
    return kExitOk;
  }
  std::unique_ptr<wf::rpc::Server> server;
  try {
    server = std::make_unique<wf::rpc::Server>(*model.adapter, static_cast<std::uint16_t>(port), host);
  } catch (const wf::Error& e) {
    fail(kExitUsage, e.what());
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::printf("model %s on %s\n", model.id.c_str(), server->endpoint().c_str());
  std::fflush(stdout);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server->stop();
  return kExitOk;
}

void add_model_options(CLI::App* cmd, ModelOptions& m) {
  cmd->add_option("--model", m.spec, "toy-bow | toy-attn[:SPEC.json] | rpc:ENDPOINT | dump:PATH")->required();
  cmd->add_option("--dim", m.dim, "hidden size of a random toy model")->check(CLI::PositiveNumber);
  cmd->add_option("--layers", m.layers, "layer count of a random toy model")->check(CLI::PositiveNumber);
  cmd->add_option("--num-classes", m.classes, "class count of a random toy model (default: from labels)");
  cmd->add_option("--model-seed", m.seed, "seed of a random toy model");
  cmd->add_option("--save-model", m.save_spec, "write the toy model weights to this JSON file");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wordflow: layer-wise word attribution store and query service"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "wordflow 0.1.0");

  PrecomputeArgs pre;
  auto* precompute = app.add_subcommand("precompute", "compute a measure store for one class pair");
  add_model_options(precompute, pre.model);
  precompute->add_option("--dataset", pre.dataset, "JSON Lines dataset")->required();
  precompute->add_option("--classes", pre.classes, "class pair P,Q")->required();
  precompute->add_option("--config", pre.config, "pipeline config JSON");
  precompute->add_option("--out", pre.out, "store directory")->required();
  precompute->add_flag("--resume", pre.resume, "reuse valid blocks of an earlier run");
  precompute->add_option("--workers", pre.workers, "worker threads (default: all cores)");
  precompute->add_flag("--quiet", pre.quiet, "no progress output");

  std::string store_dir, host = "127.0.0.1", sample, svg, json_out, dataset;
  int port = 8080;
  bool verify = false, as_json = false, stdio = false;

  auto* serve = app.add_subcommand("serve", "serve a store over HTTP");
  serve->add_option("--store", store_dir, "store directory")->required();
  serve->add_option("--port", port, "TCP port (0 picks one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "bind address");

  auto* export_flow = app.add_subcommand("export-flow", "render one sample's information flow");
  export_flow->add_option("--store", store_dir, "store directory")->required();
  export_flow->add_option("--sample", sample, "sample id")->required();
  export_flow->add_option("--svg", svg, "SVG output path (stdout when no output is given)");
  export_flow->add_option("--json", json_out, "also write the flow payload");

  auto* inspect = app.add_subcommand("inspect", "summarize a store");
  inspect->add_option("--store", store_dir, "store directory")->required();
  inspect->add_flag("--verify", verify, "read and checksum every sample block");
  inspect->add_flag("--json", as_json, "print the manifest as JSON");

  ModelOptions served;
  auto* serve_model = app.add_subcommand("serve-model", "expose a model over the adapter protocol");
  add_model_options(serve_model, served);
  serve_model->add_option("--dataset", dataset, "dataset whose vocabulary seeds a random toy model");
  serve_model->add_option("--port", port, "TCP port (0 picks one)")->check(CLI::Range(0, 65535));
  serve_model->add_option("--host", host, "bind address");
  serve_model->add_flag("--stdio", stdio, "talk over stdin/stdout instead of TCP");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*precompute) return cmd_precompute(pre);
    if (*serve) return cmd_serve(store_dir, host, port);
    if (*export_flow) return cmd_export_flow(store_dir, sample, svg, json_out);
    if (*inspect) return cmd_inspect(store_dir, verify, as_json);
    if (*serve_model) return cmd_serve_model(served, dataset, host, port, stdio);
  } catch (const Exit& e) {
    std::fprintf(stderr, "wordflow: %s\n", e.message.c_str());
    return e.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "wordflow: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
