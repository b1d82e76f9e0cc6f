// End-to-end tests of the command-line surface: file formats, exit codes,
// determinism.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kCli = CONFORMAL_CLI_PATH;

int run(const std::string& args) {
    std::string cmd = "\"" + kCli + "\" " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const fs::path& path) {
    std::istringstream ss(slurp(path));
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

// Six-row regression set: y = 2 x1 exactly.
void write_regression_csv(const fs::path& path, int rows = 6) {
    std::ostringstream ss;
    ss << "x1,y\n";
    for (int i = 0; i < rows; ++i) ss << i << "," << 2 * i << "\n";
    write_file(path, ss.str());
}

void write_classification_csv(const fs::path& path) {
    write_file(path,
               "x1,label\n0,1\n0.2,1\n0.1,1\n5,2\n5.2,2\n5.1,2\n0.15,1\n5.15,2\n0.05,1\n5.05,2\n");
}

}  // namespace

TEST_CASE("calibrate writes critical-score rows per stratum") {
    TempDir dir("cli_t1");
    write_regression_csv(dir.path / "data.csv", 12);
    write_file(dir.path / "run.cfg",
               "seed = 7\ndata.file = " + (dir.path / "data.csv").string() +
                   "\nsplit = 0.5,0.5,0\nmodel.kind = knn\nmodel.k = 2\nscore.kind = residual\n"
                   "strategy = marginal\nalpha = 0.2\n");

    CHECK(run("calibrate --config " + (dir.path / "run.cfg").string() + " --out " +
              (dir.path / "out").string()) == 0);
    auto rows = lines_of(dir.path / "out" / "calibration.csv");
    int critical_rows = 0, score_rows = 0;
    for (const auto& row : rows) {
        if (row.rfind("critical,", 0) == 0) ++critical_rows;
        if (row.rfind("score,", 0) == 0) ++score_rows;
    }
    CHECK(critical_rows == 1);
    CHECK(score_rows == 6);
    CHECK(fs::exists(dir.path / "out" / "meta.csv"));

    SUBCASE("mondrian produces one critical row per class") {
        write_file(dir.path / "mondrian.cfg",
                   "seed = 7\ndata.file = " + (dir.path / "data.csv").string() +
                       "\nsplit = 0.5,0.5,0\nmodel.kind = knn\nmodel.k = 2\nscore.kind = residual\n"
                       "strategy = mondrian\ntaxonomy = column:0\ntaxonomy.bins = 3\nalpha = 0.2\n");
        CHECK(run("calibrate --config " + (dir.path / "mondrian.cfg").string() + " --out " +
                  (dir.path / "out2").string()) == 0);
        int criticals = 0;
        for (const auto& row : lines_of(dir.path / "out2" / "calibration.csv"))
            if (row.rfind("critical,", 0) == 0) ++criticals;
        CHECK(criticals == 3);
    }

    SUBCASE("rerun with the same seed is byte-identical") {
        CHECK(run("calibrate --config " + (dir.path / "run.cfg").string() + " --out " +
                  (dir.path / "rerun").string()) == 0);
        CHECK(slurp(dir.path / "out" / "calibration.csv") ==
              slurp(dir.path / "rerun" / "calibration.csv"));
    }
}

TEST_CASE("predict emits bands, infinite bands and label sets") {
    TempDir dir("cli_t2");
    write_regression_csv(dir.path / "data.csv", 12);
    write_file(dir.path / "test.csv", "x1,y\n1,2\n4,8\n");

    SUBCASE("regression bands") {
        write_file(dir.path / "run.cfg",
                   "seed = 7\ndata.file = " + (dir.path / "data.csv").string() +
                       "\nsplit = 0.5,0.5,0\nmodel.kind = knn\nmodel.k = 2\nscore.kind = residual\n"
                       "strategy = marginal\nalpha = 0.2\n");
        REQUIRE(run("calibrate --config " + (dir.path / "run.cfg").string() + " --out " +
                    (dir.path / "cal").string()) == 0);
        CHECK(run("predict --config " + (dir.path / "run.cfg").string() + " --calibration " +
                  (dir.path / "cal" / "calibration.csv").string() + " --test " +
                  (dir.path / "test.csv").string() + " --out " + (dir.path / "pred").string()) == 0);
        auto rows = lines_of(dir.path / "pred" / "predictions.csv");
        REQUIRE(rows.size() == 3);
        CHECK(rows[0] == "row,lo,hi");
    }

    SUBCASE("strict mode serializes the infinite band as -inf,inf") {
        // Three calibration rows at alpha = 0.05 force the inflated level
        // past 1.
        write_regression_csv(dir.path / "small.csv", 6);
        write_file(dir.path / "strict.cfg",
                   "seed = 7\ndata.file = " + (dir.path / "small.csv").string() +
                       "\nsplit = 0.5,0.5,0\nmodel.kind = knn\nmodel.k = 2\nscore.kind = residual\n"
                       "strategy = marginal\nalpha = 0.05\n");
        REQUIRE(run("calibrate --config " + (dir.path / "strict.cfg").string() + " --out " +
                    (dir.path / "cal2").string()) == 0);
        REQUIRE(run("predict --config " + (dir.path / "strict.cfg").string() + " --calibration " +
                    (dir.path / "cal2" / "calibration.csv").string() + " --test " +
                    (dir.path / "test.csv").string() + " --out " + (dir.path / "pred2").string()) ==
                0);
        auto rows = lines_of(dir.path / "pred2" / "predictions.csv");
        REQUIRE(rows.size() >= 2);
        CHECK(rows[1].find("-inf,inf") != std::string::npos);
    }

    SUBCASE("classification sets; tcp at alpha 1 gives empty label fields") {
        write_classification_csv(dir.path / "cls.csv");
        write_file(dir.path / "cls_test.csv", "x1,label\n0.12,1\n5.12,2\n");
        write_file(dir.path / "cls.cfg",
                   "seed = 7\ndata.file = " + (dir.path / "cls.csv").string() +
                       "\nsplit = 0.5,0.5,0\nmodel.kind = knn\nmodel.k = 3\nscore.kind = softmax\n"
                       "strategy = marginal\nalpha = 0.2\nmodel.laplace = 1\n");
        REQUIRE(run("calibrate --config " + (dir.path / "cls.cfg").string() + " --out " +
                    (dir.path / "cal3").string()) == 0);
        REQUIRE(run("predict --config " + (dir.path / "cls.cfg").string() + " --calibration " +
                    (dir.path / "cal3" / "calibration.csv").string() + " --test " +
                    (dir.path / "cls_test.csv").string() + " --out " + (dir.path / "pred3").string()) ==
                0);
        auto rows = lines_of(dir.path / "pred3" / "predictions.csv");
        REQUIRE(rows.size() == 3);
        CHECK(rows[0] == "row,labels");
        CHECK(rows[1].find('1') != std::string::npos);

        write_file(dir.path / "tcp.cfg",
                   "seed = 7\ndata.file = " + (dir.path / "cls.csv").string() +
                       "\nsplit = 0.5,0.5,0\nmodel.kind = knn\nmodel.k = 1\nstrategy = tcp\n"
                       "alpha = 1\nscore.randomized = 1\n");
        REQUIRE(run("predict --config " + (dir.path / "tcp.cfg").string() + " --test " +
                    (dir.path / "cls_test.csv").string() + " --out " + (dir.path / "pred4").string()) ==
                0);
        auto tcp_rows = lines_of(dir.path / "pred4" / "predictions.csv");
        REQUIRE(tcp_rows.size() == 3);
        CHECK(tcp_rows[1] == "0,");
        CHECK(tcp_rows[2] == "1,");
    }

    SUBCASE("schema mismatch exits with the data code") {
        write_file(dir.path / "bad_test.csv", "x1,x2,y\n1,2,3\n");
        write_file(dir.path / "run.cfg",
                   "seed = 7\ndata.file = " + (dir.path / "data.csv").string() +
                       "\nsplit = 0.5,0.5,0\nstrategy = marginal\n");
        REQUIRE(run("calibrate --config " + (dir.path / "run.cfg").string() + " --out " +
                    (dir.path / "cal5").string()) == 0);
        CHECK(run("predict --config " + (dir.path / "run.cfg").string() + " --calibration " +
                  (dir.path / "cal5" / "calibration.csv").string() + " --test " +
                  (dir.path / "bad_test.csv").string() + " --out " + (dir.path / "pred5").string()) ==
              3);
    }
}

TEST_CASE("evaluate writes a metric report") {
    TempDir dir("cli_t3");
    write_file(dir.path / "predictions.csv", "row,lo,hi\n0,0,2\n1,0,2\n2,5,6\n");
    write_file(dir.path / "truth.csv", "x1,y\n0,1\n0,3\n0,5.5\n");
    CHECK(run("evaluate --predictions " + (dir.path / "predictions.csv").string() + " --truth " +
              (dir.path / "truth.csv").string() + " --out " + (dir.path / "rep").string()) == 0);
    auto rows = lines_of(dir.path / "rep" / "report.csv");
    REQUIRE(rows.size() >= 3);
    CHECK(rows[0] == "metric,group,value");
    bool coverage_found = false;
    for (const auto& row : rows)
        if (row.rfind("coverage,,", 0) == 0) {
            coverage_found = true;
            CHECK(row.find("0.666666") != std::string::npos);
        }
    CHECK(coverage_found);

    SUBCASE("row-count mismatch exits with the data code") {
        write_file(dir.path / "short.csv", "x1,y\n0,1\n");
        CHECK(run("evaluate --predictions " + (dir.path / "predictions.csv").string() + " --truth " +
                  (dir.path / "short.csv").string() + " --out " + (dir.path / "rep2").string()) == 3);
    }
}

TEST_CASE("experiment rejects unknown recipes with the config code") {
    TempDir dir("cli_t4");
    CHECK(run("experiment --recipe not_a_recipe --out " + (dir.path / "out").string()) == 2);

    SUBCASE("small recipe runs end to end") {
        write_file(dir.path / "quick.cfg",
                   "seed = 5\nrecipe.mc_n = 5000\n");
        CHECK(run("experiment --recipe weights_illustration --config " +
                  (dir.path / "quick.cfg").string() + " --out " + (dir.path / "w").string()) == 0);
        auto rows = lines_of(dir.path / "w" / "weights_illustration.csv");
        CHECK(rows[0] == "key,value");
        CHECK(fs::exists(dir.path / "w" / "README.md"));
    }
}

TEST_CASE("monitor emits per-event rows and honours empty streams") {
    TempDir dir("cli_t5");
    write_regression_csv(dir.path / "data.csv", 40);
    write_file(dir.path / "run.cfg",
               "seed = 11\ndata.file = " + (dir.path / "data.csv").string() +
                   "\nsplit = 0.5,0.5,0\nmodel.kind = knn\nmodel.k = 3\nscore.kind = residual\n"
                   "monitor.betting = mixture\nmonitor.threshold = 20\n");

    SUBCASE("shifted stream raises a latched alert") {
        std::ostringstream stream;
        stream << "x1,y\n";
        // On-trend rows, then a gross shift.
        for (int i = 0; i < 10; ++i) stream << i << "," << 2 * i << "\n";
        for (int i = 0; i < 25; ++i) stream << i << "," << 2 * i + 500 << "\n";
        write_file(dir.path / "stream.csv", stream.str());
        CHECK(run("monitor --config " + (dir.path / "run.cfg").string() + " --stream " +
                  (dir.path / "stream.csv").string() + " --out " + (dir.path / "mon").string()) == 0);
        auto rows = lines_of(dir.path / "mon" / "monitor.csv");
        REQUIRE(rows.size() == 36);
        CHECK(rows[0] == "index,p_value,wealth,alert");
        CHECK(rows.back().back() == '1');
    }

    SUBCASE("empty stream produces a header-only log") {
        write_file(dir.path / "empty.csv", "x1,y\n");
        CHECK(run("monitor --config " + (dir.path / "run.cfg").string() + " --stream " +
                  (dir.path / "empty.csv").string() + " --out " + (dir.path / "mon2").string()) == 0);
        auto rows = lines_of(dir.path / "mon2" / "monitor.csv");
        REQUIRE(rows.size() == 1);
        CHECK(rows[0] == "index,p_value,wealth,alert");
    }
}

TEST_CASE("config errors exit with code 2 and name the key") {
    TempDir dir("cli_t6");
    write_regression_csv(dir.path / "data.csv");
    write_file(dir.path / "bad.cfg",
               "seed = 1\ndata.file = " + (dir.path / "data.csv").string() +
                   "\nstrategy = definitely-not-a-strategy\n");
    CHECK(run("calibrate --config " + (dir.path / "bad.cfg").string() + " --out " +
              (dir.path / "out").string()) == 2);

    SUBCASE("missing data file exits with code 3") {
        write_file(dir.path / "missing.cfg", "seed = 1\ndata.file = nowhere.csv\n");
        CHECK(run("calibrate --config " + (dir.path / "missing.cfg").string() + " --out " +
                  (dir.path / "out").string()) == 3);
    }
}
