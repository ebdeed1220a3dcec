#include "petsgan/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "petsgan/errors.hpp"
#include "petsgan/eval.hpp"
#include "petsgan/external_prior.hpp"
#include "petsgan/log.hpp"
#include "petsgan/proposition.hpp"
#include "petsgan/trainer.hpp"

namespace petsgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const auto up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string flag_for(const std::string& key) {
  auto f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return "--" + f;
}

// Converts a flag string to the JSON type of the default value it overrides.
json parse_value(const json& like, const std::string& key, const std::string& text) {
  try {
    if (like.is_number_unsigned()) return json(static_cast<std::uint64_t>(std::stoull(text)));
    if (like.is_number_integer()) return json(static_cast<std::int64_t>(std::stoll(text)));
    if (like.is_number_float()) return json(std::stod(text));
    if (like.is_boolean()) return json(text == "1" || text == "true");
    if (like.is_array()) {
      json arr = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) arr.push_back(static_cast<std::int64_t>(std::stoll(item)));
      return arr;
    }
  } catch (const std::logic_error&) {
    throw UsageError("invalid value '" + text + "' for " + flag_for(key));
  }
  return json(text);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

fs::path make_run_dir(const std::string& out_flag, std::uint64_t seed) {
  fs::path dir;
  if (!out_flag.empty()) {
    dir = out_flag;
  } else {
    const char* root = std::getenv("PETSGAN_RUNS_DIR");
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    std::ostringstream name;
    name << std::put_time(&tm, "%Y%m%d-%H%M%S") << '-' << seed;
    dir = fs::path(root != nullptr && *root != '\0' ? root : "runs") / name.str();
    for (int k = 1; fs::exists(dir); ++k) {
      dir = fs::path(dir.parent_path()) / (name.str() + "-" + std::to_string(k));
    }
  }
  fs::create_directories(dir);
  return dir;
}

std::pair<std::int64_t, std::int64_t> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw UsageError("size must look like HxW, got '" + text + "'");
  try {
    return {std::stoll(text.substr(0, x)), std::stoll(text.substr(x + 1))};
  } catch (const std::logic_error&) {
    throw UsageError("size must look like HxW, got '" + text + "'");
  }
}

std::string sample_name(std::size_t i) {
  std::ostringstream s;
  s << "sample_" << std::setw(3) << std::setfill('0') << i << ".png";
  return s.str();
}

// RunConfig flags shared by train and eval: one flag per config key.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::string config_file;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat JSON config file (overridden by flags)");
    for (const auto& key : config_keys()) app->add_option(flag_for(key), values[key], "config: " + key);
  }

  // defaults (of the chosen preset) < config file < flags
  RunConfig resolve(json* extra = nullptr) const {
    json file = json::object();
    if (!config_file.empty()) file = read_json_file(config_file);
    if (!file.is_object()) throw UsageError("config file must hold a flat JSON object");
    if (extra != nullptr) {
      for (const auto& k : {"image"}) {
        if (file.contains(k)) {
          (*extra)[k] = file[k];
          file.erase(k);
        }
      }
    }
    std::string preset = file.value("preset", std::string("paper"));
    if (auto it = values.find("preset"); it != values.end() && !it->second.empty()) preset = it->second;
    RunConfig cfg;
    try {
      cfg = RunConfig::from_preset(preset);
      cfg = apply_json(file, cfg);
      const auto defaults = to_json(cfg);
      json flags = json::object();
      for (const auto& [key, text] : values) {
        if (!text.empty()) flags[key] = parse_value(defaults.at(key), key, text);
      }
      cfg = apply_json(flags, cfg);
      cfg.validate();
    } catch (const ArgumentError& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

// Flags not known to the chosen subcommand are reported with the closest match.
void check_flags(CLI::App& app, const std::vector<std::string>& args) {
  CLI::App* scope = &app;
  for (const auto& a : args) {
    if (a == "--") break;
    if (a.rfind("--", 0) != 0) {
      if (scope == &app) {
        for (auto* sub : app.get_subcommands({})) {
          if (sub->get_name() == a) scope = sub;
        }
      }
      continue;
    }
    const auto name = a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2);
    std::vector<std::string> known;
    for (const auto* o : scope->get_options()) {
      for (const auto& l : o->get_lnames()) known.push_back(l);
    }
    if (std::find(known.begin(), known.end(), name) != known.end()) continue;
    std::string best;
    auto best_d = std::string::npos;
    for (const auto& k : known) {
      const auto d = levenshtein(name, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    std::string msg = "unknown flag --" + name;
    if (!best.empty() && best_d <= std::max<std::size_t>(3, name.size() / 3)) msg += "; did you mean --" + best + "?";
    throw UsageError(msg);
  }
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, std::uint64_t seed) {
  if (name == "random") return std::make_unique<RandomConvFeatures>(seed);
  if (name == "pixels") return std::make_unique<PixelFeatures>();
  throw UsageError("unknown extractor '" + name + "' (expected random or pixels)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Single-image generation with external and internal priors", "petsgan"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off");

  // train
  auto* train_cmd = app.add_subcommand("train", "train G, F and the discriminators on one image");
  std::string train_image, train_out;
  ConfigFlags train_flags;
  std::int64_t train_samples = 4;
  train_cmd->add_option("--image", train_image, "exemplar image (PNG/JPEG)");
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--samples", train_samples, "syntheses written after training");
  train_flags.attach(train_cmd);

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "sample syntheses from a checkpoint");
  std::string gen_ckpt, gen_size, gen_out;
  std::int64_t gen_n = 9;
  std::uint64_t gen_seed = 0;
  gen_cmd->add_option("--ckpt", gen_ckpt, "checkpoint (.pkc)")->required();
  gen_cmd->add_option("--n", gen_n, "number of samples");
  gen_cmd->add_option("--size", gen_size, "HxW (default: the exemplar size)");
  gen_cmd->add_option("--seed", gen_seed, "sampling seed");
  gen_cmd->add_option("--out", gen_out, "output directory");

  // invert
  auto* inv_cmd = app.add_subcommand("invert", "invert an image through a generator service");
  std::string inv_image, inv_socket, inv_out;
  std::int64_t inv_steps = 500, inv_samples = 0, inv_max_side = 256, inv_down = 8;
  double inv_sigma = 0.5;
  std::uint64_t inv_seed = 0;
  inv_cmd->add_option("--image", inv_image, "target image")->required();
  inv_cmd->add_option("--socket", inv_socket, "generator service socket")->required();
  inv_cmd->add_option("--steps", inv_steps, "optimization steps");
  inv_cmd->add_option("--samples", inv_samples, "perturbed samples to write (a prior directory)");
  inv_cmd->add_option("--sigma", inv_sigma, "latent perturbation std");
  inv_cmd->add_option("--max-side", inv_max_side, "preprocessing max side");
  inv_cmd->add_option("--down-factor", inv_down, "preprocessing down factor");
  inv_cmd->add_option("--seed", inv_seed, "seed");
  inv_cmd->add_option("--out", inv_out, "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score syntheses of one checkpoint or of every image in a directory");
  std::string eval_ckpt, eval_images, eval_out, eval_extractor = "random";
  std::int64_t eval_n = 8;
  ConfigFlags eval_flags;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate");
  eval_cmd->add_option("--images", eval_images, "directory of images; each is trained and evaluated");
  eval_cmd->add_option("--n", eval_n, "samples per image");
  eval_cmd->add_option("--extractor", eval_extractor, "random or pixels");
  eval_cmd->add_option("--out", eval_out, "output directory");
  eval_flags.attach(eval_cmd);

  // verify-prop1
  auto* prop_cmd = app.add_subcommand("verify-prop1", "check the patch-statistics transport property of IR");
  std::string prop_image, prop_out;
  std::int64_t prop_samples = 20, prop_steps = 1500, prop_max_side = 64, prop_down = 8, prop_s = 7, prop_s_star = 3,
               prop_window = 3;
  double prop_floor = 25.0, prop_lr = 1e-3;
  std::uint64_t prop_seed = 0;
  prop_cmd->add_option("--image", prop_image, "exemplar image")->required();
  prop_cmd->add_option("--samples", prop_samples, "noise samples");
  prop_cmd->add_option("--steps", prop_steps, "IR reconstruction steps");
  prop_cmd->add_option("--lr", prop_lr, "IR learning rate");
  prop_cmd->add_option("--psnr-floor", prop_floor, "required reconstruction PSNR");
  prop_cmd->add_option("--max-side", prop_max_side, "preprocessing max side");
  prop_cmd->add_option("--down-factor", prop_down, "preprocessing down factor");
  prop_cmd->add_option("--s", prop_s, "full-resolution window");
  prop_cmd->add_option("--s-star", prop_s_star, "low-resolution window");
  prop_cmd->add_option("--pt-window", prop_window, "patch-transfer window");
  prop_cmd->add_option("--seed", prop_seed, "seed");
  prop_cmd->add_option("--out", prop_out, "output directory");

  // upscale
  auto* up_cmd = app.add_subcommand("upscale", "train a new restoration net to a larger scale");
  std::string up_ckpt, up_image, up_out;
  std::int64_t up_factor = 4, up_n = 4;
  HiresOptions up_opts;
  up_cmd->add_option("--ckpt", up_ckpt, "base checkpoint")->required();
  up_cmd->add_option("--image", up_image, "high-resolution original")->required();
  up_cmd->add_option("--factor", up_factor, "power-of-two scale factor");
  up_cmd->add_option("--steps", up_opts.steps, "training steps");
  up_cmd->add_option("--crop", up_opts.crop, "low-resolution crop side (0: whole image)");
  up_cmd->add_option("--lr", up_opts.lr, "learning rate");
  up_cmd->add_option("--n", up_n, "upscaled syntheses to write");
  up_cmd->add_option("--seed", up_opts.seed, "seed");
  up_cmd->add_option("--out", up_out, "output directory");

  // manipulate
  auto* man_cmd = app.add_subcommand("manipulate", "harmonize / style-transfer / edit / paint2image with one image");
  std::string man_task, man_image, man_content, man_out;
  std::int64_t man_max_side = 64;
  ManipulationOptions man_opts;
  man_cmd->add_option("--task", man_task, "harmonize, style_transfer, edit or paint2image")->required();
  man_cmd->add_option("--image", man_image, "exemplar image")->required();
  man_cmd->add_option("--content", man_content, "content image")->required();
  man_cmd->add_option("--max-side", man_max_side, "working resolution");
  man_cmd->add_option("--steps", man_opts.training.steps, "reconstruction steps");
  man_cmd->add_option("--pt-window", man_opts.pt_window, "patch-transfer window");
  man_cmd->add_option("--seed", man_opts.training.seed, "seed");
  man_cmd->add_option("--out", man_out, "output directory");

  try {
    check_flags(app, args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    log::set_level(log_level);
    if (train_cmd->parsed()) {
      json extra = json::object();
      auto cfg = train_flags.resolve(&extra);
      if (train_image.empty()) {
        if (!extra.contains("image")) throw UsageError("train needs --image");
        train_image = extra["image"].get<std::string>();
      }
      auto raw = load_image(train_image);
      const auto dir = make_run_dir(train_out, cfg.seed);
      auto resolved = to_json(cfg);
      resolved["image"] = train_image;
      write_json(dir / "resolved_config.json", resolved);
      TrainOptions opts;
      opts.metrics_path = dir / "metrics.jsonl";
      opts.checkpoint_dir = dir / "checkpoints";
      auto result = train(raw, cfg, opts);
      save_checkpoint(result.checkpoint, dir / "checkpoints" / "final.pkc");
      auto bundle = bundle_from_checkpoint(result.checkpoint);
      Rng rng(cfg.seed, "samples");
      auto samples = generate_samples(bundle, train_samples, bundle.image.height(), bundle.image.width(), rng);
      fs::create_directories(dir / "samples");
      for (std::size_t i = 0; i < samples.size(); ++i) save_png(samples[i], dir / "samples" / sample_name(i));
      out << dir.string() << '\n';
    } else if (gen_cmd->parsed()) {
      auto ckpt = load_checkpoint(gen_ckpt);
      auto bundle = bundle_from_checkpoint(ckpt);
      auto [h, w] = gen_size.empty() ? std::pair{bundle.image.height(), bundle.image.width()} : parse_size(gen_size);
      const auto dir = make_run_dir(gen_out, gen_seed);
      write_json(dir / "resolved_config.json",
                 {{"command", "generate"}, {"ckpt", gen_ckpt}, {"n", gen_n}, {"size", std::to_string(h) + "x" +
                                                                                           std::to_string(w)},
                  {"seed", gen_seed}, {"run_config", to_json(bundle.config)}});
      Rng rng(gen_seed, "generate");
      auto samples = generate_samples(bundle, gen_n, h, w, rng);
      for (std::size_t i = 0; i < samples.size(); ++i) save_png(samples[i], dir / sample_name(i));
      out << dir.string() << '\n';
    } else if (inv_cmd->parsed()) {
      auto gen = std::make_shared<ServiceGenerator>(inv_socket);
      auto pre = preprocess(load_image(inv_image), inv_max_side, inv_down);
      const auto gd = gen->output_dims();
      auto target = resize(pre.image.to_signed(), gd.height, gd.width);
      const auto dir = make_run_dir(inv_out, inv_seed);
      write_json(dir / "resolved_config.json", {{"command", "invert"},
                                                 {"image", inv_image},
                                                 {"socket", inv_socket},
                                                 {"steps", inv_steps},
                                                 {"samples", inv_samples},
                                                 {"sigma", inv_sigma},
                                                 {"max_side", inv_max_side},
                                                 {"down_factor", inv_down},
                                                 {"seed", inv_seed}});
      Rng rng(inv_seed, "inversion");
      auto code = invert(*gen, target, inv_steps, rng);
      auto z = code.z.to(torch::kFloat64).contiguous();
      std::vector<double> zv(z.data_ptr<double>(), z.data_ptr<double>() + z.numel());
      write_json(dir / "latent.json",
                 {{"z", zv}, {"final_loss", code.final_loss}, {"steps", code.steps}, {"converged", code.converged}});
      {
        torch::NoGradGuard no_grad;
        auto rec = gen->generate(code.z.to(torch::kFloat32));
        save_png(ImageTensor::clamped(rec, ValueRange::Signed).to_unit(), dir / "reconstruction.png");
      }
      if (inv_samples > 0) {
        fs::create_directories(dir / "prior");
        Rng srng(inv_seed, "perturb");
        auto samples = perturb_and_sample(*gen, code, inv_sigma, inv_samples,
                                          ImageDims{gd.channels, gd.height, gd.width}, srng, ValueRange::Unit);
        for (std::size_t i = 0; i < samples.size(); ++i) save_png(samples[i], dir / "prior" / sample_name(i));
      }
      out << dir.string() << '\n';
    } else if (eval_cmd->parsed()) {
      if (eval_ckpt.empty() == eval_images.empty()) throw UsageError("eval needs exactly one of --ckpt or --images");
      auto cfg = eval_flags.resolve();
      const auto dir = make_run_dir(eval_out, cfg.seed);
      auto fx = make_extractor(eval_extractor, cfg.seed);
      auto resolved = to_json(cfg);
      resolved["command"] = "eval";
      resolved["extractor"] = eval_extractor;
      resolved["n"] = eval_n;
      write_json(dir / "resolved_config.json", resolved);
      auto score = [&](ModelBundle& bundle, double seconds) {
        Rng rng(cfg.seed, "eval");
        auto samples = generate_samples(bundle, eval_n, bundle.image.height(), bundle.image.width(), rng);
        auto report = evaluate(bundle.image, samples, *fx, cfg.s);
        report.train_seconds = seconds;
        return report;
      };
      if (!eval_ckpt.empty()) {
        auto ckpt = load_checkpoint(eval_ckpt);
        auto bundle = bundle_from_checkpoint(ckpt);
        auto report = score(bundle, ckpt.archive.meta.value("elapsed_s", 0.0));
        write_json(dir / "report.json", report.to_json());
        out << report.to_json().dump() << '\n';
      } else {
        std::vector<fs::path> images;
        for (const auto& e : fs::directory_iterator(eval_images)) {
          auto ext = e.path().extension().string();
          std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
          if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") images.push_back(e.path());
        }
        std::sort(images.begin(), images.end());
        if (images.empty()) throw UsageError("no PNG/JPEG images in " + eval_images);
        std::ofstream csv(dir / "aggregate.csv");
        csv << "image,sifid,diversity,patch_dist,train_seconds,n_samples,extractor\n";
        for (const auto& path : images) {
          auto result = train(load_image(path), cfg);
          auto bundle = bundle_from_checkpoint(result.checkpoint);
          auto report = score(bundle, result.metrics.empty() ? 0.0 : result.metrics.back().wallclock_s);
          write_json(dir / (path.stem().string() + ".json"), report.to_json());
          csv << path.filename().string() << ',' << report.sifid << ',' << report.diversity << ','
              << report.patch_dist << ',' << report.train_seconds << ',' << report.n_samples << ','
              << report.extractor << '\n';
        }
      }
      out << dir.string() << '\n';
    } else if (prop_cmd->parsed()) {
      const auto dir = make_run_dir(prop_out, prop_seed);
      write_json(dir / "resolved_config.json", {{"command", "verify-prop1"},
                                                 {"image", prop_image},
                                                 {"samples", prop_samples},
                                                 {"steps", prop_steps},
                                                 {"lr", prop_lr},
                                                 {"psnr_floor", prop_floor},
                                                 {"max_side", prop_max_side},
                                                 {"down_factor", prop_down},
                                                 {"s", prop_s},
                                                 {"s_star", prop_s_star},
                                                 {"pt_window", prop_window},
                                                 {"seed", prop_seed}});
      auto pre = preprocess(load_image(prop_image), prop_max_side, prop_down);
      torch::manual_seed(derive_seed(prop_seed, "prop1-init"));
      DipNetOptions fo;
      fo.embedder = {pre.image.channels(), prop_window, prop_window, 64};
      fo.ir.scale = prop_down;
      DipNet f(fo, pre.low.to_signed().data());
      ReconstructionOptions ro;
      ro.steps = prop_steps;
      ro.lr = prop_lr;
      ro.seed = prop_seed;
      ro.target = ReconstructionTarget::IrOnly;
      ro.stop_psnr = prop_floor + 1.0;
      train_reconstruction(f, pre.image, pre.low, ro);
      Rng rng(prop_seed, "prop1-samples");
      auto samples = noise_samples(pre.low.to_signed(), prop_samples, rng);
      Prop1Options po;
      po.psnr_floor = prop_floor;
      auto report = verify_proposition1(pre.image, pre.low, f, samples,
                                        PatchConfig{prop_s, prop_s_star, Boundary::Valid}, po);
      write_json(dir / "prop1.json", report.to_json());
      out << report.to_json().dump() << '\n';
    } else if (up_cmd->parsed()) {
      auto ckpt = load_checkpoint(up_ckpt);
      auto bundle = bundle_from_checkpoint(ckpt);
      auto raw = load_image(up_image);
      auto hi = resize(raw, bundle.image.height() * up_factor, bundle.image.width() * up_factor);
      const auto dir = make_run_dir(up_out, up_opts.seed);
      write_json(dir / "resolved_config.json", {{"command", "upscale"},
                                                 {"ckpt", up_ckpt},
                                                 {"image", up_image},
                                                 {"factor", up_factor},
                                                 {"steps", up_opts.steps},
                                                 {"crop", up_opts.crop},
                                                 {"lr", up_opts.lr},
                                                 {"n", up_n},
                                                 {"seed", up_opts.seed}});
      auto result = hires_upscale(bundle, hi, up_factor, up_opts);
      Rng rng(up_opts.seed, "upscale-samples");
      auto base = generate_samples(bundle, up_n, bundle.image.height(), bundle.image.width(), rng);
      auto big = upscale_samples(result.ir, base);
      for (std::size_t i = 0; i < big.size(); ++i) save_png(big[i], dir / sample_name(i));
      json report = {{"psnr", result.psnr}, {"seconds", result.seconds}, {"steps", result.steps}};
      write_json(dir / "report.json", report);
      out << report.dump() << '\n';
    } else if (man_cmd->parsed()) {
      const auto task = parse_manipulation_task(man_task);
      const auto dir = make_run_dir(man_out, man_opts.training.seed);
      write_json(dir / "resolved_config.json", {{"command", "manipulate"},
                                                 {"task", man_task},
                                                 {"image", man_image},
                                                 {"content", man_content},
                                                 {"max_side", man_max_side},
                                                 {"steps", man_opts.training.steps},
                                                 {"pt_window", man_opts.pt_window},
                                                 {"seed", man_opts.training.seed}});
      auto pre = preprocess(load_image(man_image), man_max_side, man_opts.down_factor);
      auto m = train_manipulator(pre.image, man_opts);
      auto content = preprocess(load_image(man_content), man_max_side, man_opts.down_factor).image;
      auto result = manipulate(m, task, content);
      save_png(result.output, dir / "output.png");
      out << dir.string() << '\n';
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace petsgan::cli
