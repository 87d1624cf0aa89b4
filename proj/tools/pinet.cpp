// pinet command-line entry point. Argument handling is CLI11; everything else
// lives in pinet/cli.hpp so the tests can drive it in-process.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "pinet/cli.hpp"

namespace {

template <typename F>
int guarded(const std::string& command, F&& body) {
  try {
    return body();
  } catch (const pinet::ConfigError& e) {
    std::cerr << pinet::cli::error_line(command, "config", e.what()) << '\n';
  } catch (const pinet::DomainError& e) {
    std::cerr << pinet::cli::error_line(command, "domain", e.what()) << '\n';
  } catch (const pinet::PrecisionError& e) {
    std::cerr << pinet::cli::error_line(command, "precision", e.what()) << '\n';
  } catch (const pinet::ShapeError& e) {
    std::cerr << pinet::cli::error_line(command, "shape", e.what()) << '\n';
  } catch (const pinet::FitError& e) {
    std::cerr << pinet::cli::error_line(command, "fit", e.what()) << '\n';
  } catch (const pinet::PreconditionError& e) {
    std::cerr << pinet::cli::error_line(command, "precondition", e.what()) << '\n';
  } catch (const pinet::DivergenceError& e) {
    std::cerr << pinet::cli::error_line(command, "divergence", e.what()) << '\n';
  } catch (const pinet::UnsupportedArchitecture& e) {
    std::cerr << pinet::cli::error_line(command, "unsupported-architecture", e.what()) << '\n';
  } catch (const std::exception& e) {
    std::cerr << pinet::cli::error_line(command, "internal", e.what()) << '\n';
  }
  return 1;
}

const std::map<std::string, std::string> kDescriptions = {
    {"kernel-eval", "evaluate a closed-form kernel profile at t"},
    {"empirical-ntk", "Monte-Carlo tangent kernel of a random finite-width network"},
    {"spectrum", "Mercer eigenvalues of a dot-product kernel on the sphere"},
    {"decay-fit", "log-log decay slope of a spectrum.csv"},
    {"harmonics", "train on spherical-harmonic targets and trace per-degree residuals"},
    {"sinusoids", "train on a sum of sinusoids and trace per-frequency amplitude ratios"},
    {"robustness", "perturb trained weights and report retained amplitude ratios"},
    {"gradcheck", "compare backpropagated gradients with central differences"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pinet: product-network kernels, spectra and training experiments"};
  app.set_version_flag("--version", std::string(pinet::cli::kVersion));
  app.require_subcommand(1);

  struct Slot {
    CLI::App* sub = nullptr;
    std::map<std::string, std::string> values;
    std::string config_file;
    std::string out;
  };
  std::map<std::string, Slot> slots;
  for (const auto& name : pinet::cli::commands()) {
    Slot& s = slots[name];
    s.sub = app.add_subcommand(name, kDescriptions.at(name));
    s.sub->allow_extras();
    s.sub->add_option("--config", s.config_file, "configuration file");
    s.sub->add_option("--out", s.out, std::string("output directory (default $") + pinet::cli::kOutDirEnv + " or .)");
    for (const auto& key : pinet::cli::schema(name)) {
      std::string help = key.help + " [" + pinet::cli::type_name(key.type) + ", default '" + key.default_value + "']";
      s.sub->add_option("--" + key.name, s.values[key.name], help);
    }
  }

  std::string replay_file, replay_out;
  CLI::App* replay = app.add_subcommand("replay", "re-run the configuration embedded in an output file");
  replay->add_option("file", replay_file, "file written by a previous run")->required();
  replay->add_option("--out", replay_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (replay->parsed()) {
    return guarded("replay", [&] {
      const auto [command, text] = pinet::cli::embedded_config(pinet::cli::read_file(replay_file));
      pinet::cli::FlagOverrides flags;
      if (!replay_out.empty()) flags.emplace_back("out", replay_out);
      return pinet::cli::dispatch(pinet::cli::parse_config_text(command, text, flags), std::cout);
    });
  }

  for (auto& [name, s] : slots) {
    if (!s.sub->parsed()) continue;
    return guarded(name, [&] {
      if (const auto extra = s.sub->remaining(); !extra.empty()) {
        std::string arg = extra.front();
        arg.erase(0, arg.find_first_not_of('-'));
        throw pinet::ConfigError("unknown key: " + arg.substr(0, arg.find('=')));
      }
      pinet::cli::FlagOverrides flags;
      for (const auto& key : pinet::cli::schema(name))
        if (s.sub->count("--" + key.name) > 0) flags.emplace_back(key.name, s.values[key.name]);
      if (!s.out.empty()) flags.emplace_back("out", s.out);
      std::optional<std::filesystem::path> file;
      if (!s.config_file.empty()) file = s.config_file;
      return pinet::cli::dispatch(pinet::cli::parse_config(name, file, flags), std::cout);
    });
  }
  return 1;
}
