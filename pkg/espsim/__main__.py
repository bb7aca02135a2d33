from espsim.cli import main

raise SystemExit(main())
