/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <memory>
#include <optional>
#include <string>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "introloop/console/console.hpp"
#include "introloop/console/service.hpp"
#include "introloop/dump/dump_store.hpp"
#include "introloop/introspect/introspect.hpp"
#include "introloop/monitor/monitor.hpp"
#include "introloop/reactor/blocker.hpp"

namespace py = pybind11;
using namespace introloop;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::bytes as_bytes(const std::vector<std::uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

// A guest, its monitor and a console over both.
class Lab {
public:
    Lab(std::uint64_t memory_mib, std::uint64_t seed, const std::string& policy, std::optional<std::string> scratch,
        bool keep_temp, std::optional<py::object> boot_plan, std::optional<py::object> profile) {
        auto config = guest::GuestConfig::standard(memory_mib << 20, seed);
        if (profile) config.profile = from_py(*profile).get<KernelProfile>();
        if (boot_plan) config.boot_plan = from_py(*boot_plan).get<std::vector<guest::PlanAction>>();
        const auto mode = monitor::parse_reaction_mode(policy);
        if (!mode) throw Error(ErrorCode::BadArguments, "policy must be auto or defer");
        guest_ = std::make_unique<guest::GuestMachine>(config);
        monitor_ = std::make_unique<monitor::Monitor>(*guest_, config.profile, monitor::ReactionPolicy{*mode});
        console::ConsoleOptions opts;
        if (scratch) opts.scratch_dir = *scratch;
        opts.keep_temp = keep_temp;
        console_ = std::make_unique<console::Console>(guest_.get(), monitor_.get(), opts);
    }

    guest::GuestMachine& guest() { return *guest_; }
    monitor::Monitor& monitor() { return *monitor_; }
    console::Console& console() { return *console_; }

private:
    std::unique_ptr<guest::GuestMachine> guest_;
    std::unique_ptr<monitor::Monitor> monitor_;
    std::unique_ptr<console::Console> console_;
};

guest::RootkitAction rootkit_action(const std::string& kind, const py::object& arg) {
    if (kind == "hide") return guest::RootkitAction::hide(arg.cast<std::uint32_t>());
    if (kind == "spawn_hidden") return guest::RootkitAction::spawn_hidden(arg.cast<std::string>());
    if (kind == "terminate") return guest::RootkitAction::terminate(arg.cast<std::uint32_t>());
    if (kind == "reuse_slot") return guest::RootkitAction::reuse_slot(arg.cast<Address>());
    throw Error(ErrorCode::BadArguments, "unknown rootkit action '" + kind + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Closed-loop introspection of a simulated guest";

    static PyObject* error_type = PyErr_NewException("introloop._core.IntroloopError", PyExc_RuntimeError, nullptr);
    m.attr("IntroloopError") = py::handle(error_type);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::reinterpret_borrow<py::object>(error_type)(std::string(to_string(e.code())) + ": " +
                                                                           e.what());
            exc.attr("code") = std::string(to_string(e.code()));
            PyErr_SetObject(error_type, exc.ptr());
        }
    });

    m.def("standard_profile", [](std::uint64_t memory_size) { return to_py(KernelProfile::standard(memory_size)); },
          py::arg("memory_size") = 64ull << 20);

    py::class_<Lab>(m, "Lab")
        .def(py::init<std::uint64_t, std::uint64_t, const std::string&, std::optional<std::string>, bool,
                      std::optional<py::object>, std::optional<py::object>>(),
             py::arg("memory_mib") = 64, py::arg("seed") = 0, py::arg("policy") = "auto",
             py::arg("scratch") = py::none(), py::arg("keep_temp") = false, py::arg("boot_plan") = py::none(),
             py::arg("profile") = py::none())
        .def_property_readonly("clock", [](Lab& l) { return l.guest().clock(); })
        .def_property_readonly("cpu_mode", [](Lab& l) { return std::string(to_string(l.guest().cpu().mode)); })
        .def_property_readonly("kernel_ready", [](Lab& l) { return l.guest().kernel_ready(); })
        .def_property_readonly("memory_size", [](Lab& l) { return l.guest().memory_size(); })
        .def("step", [](Lab& l, std::uint64_t n) { return to_py(l.guest().step(n)); }, py::arg("n") = 1,
             "Advance the guest only, bypassing the monitor")
        .def(
            "run",
            [](Lab& l, std::uint64_t n) {
                const auto r = l.monitor().run(n);
                return to_py({{"guest_events", r.guest_events}, {"events", r.events}});
            },
            py::arg("n") = 1, "Run the monitor loop for n steps")
        .def("spawn", [](Lab& l, const std::string& name) { return l.guest().spawn(name); })
        .def(
            "inject",
            [](Lab& l, const std::string& kind, const py::object& arg) {
                return to_py(l.guest().inject(rootkit_action(kind, arg)));
            },
            py::arg("kind"), py::arg("arg"))
        .def("ground_truth", [](Lab& l) { return to_py(l.guest().ground_truth()); })
        .def("read",
             [](Lab& l, std::uint64_t offset, std::uint64_t length) {
                 return as_bytes(l.guest().mem_access({offset, length}));
             })
        .def(
            "cross_view",
            [](Lab& l, std::optional<std::string> dump_path) {
                if (dump_path) {
                    auto src = dump::open_dump(std::filesystem::path(*dump_path));
                    return to_py(introspect::cross_view(*src, l.monitor().profile()));
                }
                const auto snap = l.guest().snapshot();
                return to_py(introspect::cross_view(snap, l.monitor().profile()));
            },
            py::arg("dump_path") = py::none())
        .def(
            "block",
            [](Lab& l, Address address, bool unlink_tracking) {
                return to_py(l.console().block(address, unlink_tracking));
            },
            py::arg("address"), py::arg("unlink_tracking") = false)
        .def("dump_full",
             [](Lab& l, const std::string& path) {
                 guest::LiveSource live(l.guest());
                 return to_py(dump::dump_full(live, path));
             })
        .def("dump_update_range",
             [](Lab& l, const std::string& manifest_path, std::uint64_t start, std::uint64_t length) {
                 auto manifest = dump::DumpManifest::load(manifest_path);
                 guest::LiveSource live(l.guest());
                 const auto u = dump::dump_update_range_with_diff(manifest, {start, length}, live);
                 json changes = json::array();
                 for (const auto& c : u.changes) changes.push_back({{"start", c.start}, {"length", c.length}});
                 return to_py({{"checkpoint", u.checkpoint.id}, {"changes", changes}});
             })
        .def("arm_boot_dump", [](Lab& l, const std::string& path) { l.monitor().arm_boot_dump(path); })
        .def(
            "watch",
            [](Lab& l, std::uint64_t start, std::uint64_t length, std::uint64_t period) {
                return l.console().watch({start, length}, period);
            },
            py::arg("start"), py::arg("length"), py::arg("period") = 1)
        .def("decide",
             [](Lab& l, std::uint64_t finding_id, const std::string& action) -> py::object {
                 const auto d = monitor::parse_decision(action);
                 if (!d) throw Error(ErrorCode::BadArguments, "action must be BLOCK or OBSERVE");
                 const auto r = l.monitor().decide(finding_id, *d);
                 return r ? to_py(*r) : py::none();
             })
        .def("findings", [](Lab& l) { return to_py(l.monitor().findings()); })
        .def(
            "events", [](Lab& l, std::uint64_t since) { return to_py(l.monitor().events().since(since)); },
            py::arg("since") = 0)
        .def("dispatch",
             [](Lab& l, const std::string& line) {
                 console::CommandResult r;
                 {
                     py::gil_scoped_release release;
                     r = l.console().dispatch(line);
                 }
                 return to_py(r);
             })
        .def(
            "api",
            [](Lab& l, const std::string& method, const std::string& path, std::map<std::string, std::string> query,
               const py::object& body) {
                const std::string text = body.is_none() ? std::string() : from_py(body).dump();
                console::ApiResponse r;
                {
                    py::gil_scoped_release release;
                    r = console::handle_api(&l.console(), method, path, query, text);
                }
                return py::make_tuple(r.status, to_py(r.body));
            },
            py::arg("method"), py::arg("path"), py::arg("query") = std::map<std::string, std::string>{},
            py::arg("body") = py::none());

    m.def(
        "scan_image",
        [](py::bytes image, py::object profile) {
            const std::string_view raw(image);
            BufferSource src(std::vector<std::uint8_t>(raw.begin(), raw.end()), "image");
            const auto p = profile.is_none() ? KernelProfile::standard(src.size()) : from_py(profile).get<KernelProfile>();
            json out = json::array();
            for (const auto& o : introspect::scan_processes(src, p)) {
                out.push_back({{"address", o.address}, {"pid", o.pid}, {"name", o.name}, {"state", o.state}});
            }
            return to_py(out);
        },
        py::arg("image"), py::arg("profile") = py::none());

    m.def(
        "reconstruct",
        [](const std::string& manifest_path, std::uint32_t checkpoint, std::uint64_t start, std::uint64_t length) {
            return as_bytes(dump::reconstruct(dump::DumpManifest::load(manifest_path), checkpoint, {start, length}));
        },
        py::arg("manifest_path"), py::arg("checkpoint"), py::arg("start"), py::arg("length"));
}
