#include <catch2/catch_amalgamated.hpp>

#include "iosim/config.hpp"

using namespace iosim;
using namespace iosim::config;

TEST_CASE("a full config file parses") {
    const char* text =
        "# calibration\n"
        "[profile]\n"
        "crossing = 351\n"
        "syscall = 199\n"
        "fs = 2006\n"
        "bio = 379\n"
        "driver = 113\n"
        "device = 3224\n"
        "sfunc_exec = 100\n"
        "\n"
        "[device]\n"
        "parallelism = 64\n"
        "max_iops = 5000000\n"
        "inflight_limit = 1024\n"
        "\n"
        "[bench]\n"
        "mode = baseline,driver\n"
        "depth = 1,2,3\n"
        "workers = 1,12\n"
        "io = uring\n"
        "batch = 1,8\n"
        "pipeline = 8\n"
        "duration_ms = 25   # per cell\n"
        "seed = 7\n"
        "hop_limit = 16\n"
        "\n"
        "[file.index]\n"
        "extent = 0,100,4096\n"
        "extent = 4096,500,4096\n";
    const RunConfig rc = parse(text);
    CHECK(rc.profile.total_path_ns() == 6272);
    CHECK(rc.device.service_ns == 3224); // copied from [profile] device
    CHECK(rc.device.parallelism == 64);
    CHECK(rc.bench.modes == std::vector<std::string>{"baseline", "driver"});
    CHECK(rc.bench.depths == std::vector<u32>{1, 2, 3});
    CHECK(rc.bench.workers == std::vector<u32>{1, 12});
    CHECK(rc.bench.batches == std::vector<u32>{1, 8});
    CHECK(rc.bench.io == "uring");
    CHECK(rc.bench.duration_ms == 25);
    CHECK(rc.bench.seed == 7);
    REQUIRE(rc.files.count("index") == 1);
    REQUIRE(rc.files.at("index").extents.size() == 2);
    CHECK(rc.files.at("index").extents[1].pba == 500);
}

TEST_CASE("unknown keys fail closed") {
    CHECK_THROWS_AS(parse("[profile]\ncrosing = 351\n"), ConfigError);
    CHECK_THROWS_AS(parse("[device]\nspeed = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("[bench]\ndepths = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[file.a]\npba = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse("[general]\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse("x = 1\n"), ConfigError); // key before any section
}

TEST_CASE("config errors carry the offending line") {
    try {
        parse("[profile]\ncrossing = 351\nbogus = 1\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line == 3);
        CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
}

TEST_CASE("values must be integers where integers are expected") {
    CHECK_THROWS_AS(parse("[profile]\ncrossing = fast\n"), ConfigError);
    CHECK_THROWS_AS(parse("[bench]\ndepth = 1,two\n"), ConfigError);
    CHECK_THROWS_AS(parse("[file.a]\nextent = 1,2\n"), ConfigError);
    CHECK_THROWS_AS(parse("[bench]\nio = async\n"), ConfigError);
}

TEST_CASE("batch only makes sense for ring-batched runs") {
    CHECK_THROWS_AS(parse("[bench]\nbatch = 8\n"), ConfigError);
    CHECK_NOTHROW(parse("[bench]\nio = uring\nbatch = 8\n"));
    CHECK_NOTHROW(parse("[bench]\nbatch = 8\nio = uring\n")); // order-insensitive
}

TEST_CASE("defaults survive an empty config") {
    const RunConfig rc = parse("");
    CHECK(rc.profile.total_path_ns() == 6272);
    CHECK(rc.device.max_iops == 5'000'000);
    CHECK(rc.bench.io == "sync");
    CHECK(rc.bench.page_size == 512);
}
