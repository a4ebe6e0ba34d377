// Writes a planted corpus, runs the pipeline with and without synthetic
// documents, and prints the words closest to each label.
//
//   quickstart [work_dir]

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mtc/mtc.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "mtc-quickstart";
  fs::create_directories(dir);

  mtc::PlantedConfig planted;
  const auto corpus = (dir / "planted.jsonl").string();
  mtc::write_planted_corpus(planted, corpus);

  mtc::RunConfig cfg;
  cfg.corpus = corpus;
  cfg.schema = mtc::planted_schema();
  cfg.k_per_class = 10;

  try {
    for (std::size_t samples : {0, 100}) {
      cfg.gen.samples_per_class = samples;
      cfg.output_dir = (dir / ("run-s" + std::to_string(samples))).string();
      const auto report = mtc::run_pipeline(cfg);
      std::cout << "samples_per_class " << samples << ": micro F1 " << mtc::fixed(report.micro_f1, 4)
                << ", macro F1 " << mtc::fixed(report.macro_f1, 4) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  std::ifstream nearest(dir / "run-s100" / "nearest.txt");
  std::cout << "\nnearest words per label:\n" << nearest.rdbuf();
  std::cout << "artifacts under " << dir.string() << '\n';
  return 0;
}
