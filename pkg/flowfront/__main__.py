# python -m flowfront simulate --config run.json --out data.csv
from flowfront.cli.main import main

raise SystemExit(main())
